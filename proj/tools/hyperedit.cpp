// hyperedit: pretrain, train, edit, eval, render and serve from the command line.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hyperedit/config.hpp"
#include "hyperedit/edit_request.hpp"
#include "hyperedit/evaluation.hpp"
#include "hyperedit/image_io.hpp"
#include "hyperedit/log.hpp"
#include "hyperedit/service.hpp"
#include "hyperedit/training.hpp"

using namespace hyperedit;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidInput(what + ": '" + s + "' is not a number");
  }
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_number(item, what));
  if (out.empty()) throw InvalidInput(what + ": empty list");
  return out;
}

EditCoefficients parse_alphas(const std::string& s) {
  const auto v = parse_list(s, "--alphas");
  if (v.size() != 3) throw InvalidInput("--alphas expects three values c,m,f");
  EditCoefficients a{v[0], v[1], v[2]};
  a.validate();
  return a;
}

std::map<Level, PromptPair> parse_prompts(const std::vector<std::string>& specs) {
  std::map<Level, PromptPair> out;
  for (const auto& spec : specs) {
    const auto a = spec.find(':');
    const auto b = a == std::string::npos ? a : spec.find(':', a + 1);
    if (b == std::string::npos) {
      throw InvalidInput("--prompts expects level:src:tgt, got '" + spec + "'");
    }
    PromptPair p;
    p.level = level_from_string(spec.substr(0, a));
    p.src = spec.substr(a + 1, b - a - 1);
    p.tgt = spec.substr(b + 1);
    p.validate();
    if (out.count(p.level)) throw InvalidInput("--prompts gives level " + to_string(p.level) + " twice");
    out[p.level] = p;
  }
  return out;
}

ExperimentConfig maybe_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment(path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

struct Common {
  std::string config;
  std::string generator_ckpt;
  std::string hyper_ckpt;
  uint64_t seed = 0;
  std::string out;
};

int cmd_pretrain(const Common& c, int iterations) {
  auto cfg = maybe_config(c.config);
  if (iterations >= 0) cfg.pretrain.iterations = iterations;
  cfg.pretrain.seed = c.seed;
  auto params = pretrain_toy_generator(cfg.generator, cfg.pretrain, [](const PretrainLog& l) {
    log::info(log::format("pretrain %5d  sdf %.4f  color %.4f  image %.4f", l.iteration, l.sdf,
                          l.color, l.image));
  });
  save_generator(params, c.out);
  log::info("wrote " + c.out);
  return 0;
}

int cmd_train(const Common& c, int steps, bool seed_given) {
  if (c.config.empty()) throw ConfigError("--config", "train needs a config file");
  auto cfg = load_experiment(c.config);
  if (!cfg.has_training) throw ConfigError("training", "missing required section");
  if (steps >= 0) cfg.training.steps = steps;
  if (seed_given) cfg.training.seed = c.seed;
  auto theta = load_generator(c.generator_ckpt);
  auto embedders = load_embedders(cfg.embedders);
  std::optional<GroupAssignment> grouping;
  if (cfg.hyper_split) {
    grouping = GroupAssignment::from_split((*cfg.hyper_split)[0], (*cfg.hyper_split)[1],
                                           (*cfg.hyper_split)[2]);
  }
  auto hyper = make_hyper(theta, cfg.training.hyper, grouping);
  TrainOutputs outputs;
  outputs.dir = c.out;
  auto result = train(hyper, theta, cfg.training, embedders, outputs,
                      [&](int step, const LossBreakdown& l) {
                        if (step % 10 == 0 || step + 1 == cfg.training.steps) {
                          log::info(log::format(
                              "step %5d  dir %.4f  id %.4f  region %.5f  total %.4f", step, l.dir,
                              l.id, l.region, l.total));
                        }
                      });
  log::info(log::format("trained %zu steps (%d skipped); wrote %s", result.history.size(),
                        result.skipped_steps, c.out.c_str()));
  return 0;
}

int cmd_edit(const Common& c, const std::vector<std::string>& prompt_specs,
             const std::string& alphas, const std::string& poses, bool with_base,
             const std::string& sweep, const std::string& sweep_group,
             const std::string& preset) {
  auto cfg = maybe_config(c.config);
  auto theta = load_generator(c.generator_ckpt);
  auto hyper = load_hyper(c.hyper_ckpt, theta);
  auto embedders = load_embedders(cfg.embedders);

  Json body{{"schema_version", kEditSchemaVersion}, {"seed", c.seed}, {"with_base", with_base}};
  Json prompts = Json::object();
  for (const auto& [level, p] : parse_prompts(prompt_specs)) {
    prompts[to_string(level)] = {{"src", p.src}, {"tgt", p.tgt}};
  }
  if (!prompts.empty()) body["prompts"] = prompts;
  if (!preset.empty()) body["style_preset"] = preset;
  const auto a = parse_alphas(alphas);
  body["alphas"] = {{"coarse", a.coarse}, {"medium", a.medium}, {"fine", a.fine}};
  body["poses"] = Json::array();
  for (double yaw : parse_list(poses, "--poses")) body["poses"].push_back({{"yaw", yaw}});
  auto request = parse_edit_request(body, cfg.styles);

  if (sweep.empty()) {
    auto result = run_edit(theta, hyper, *embedders.joint, request);
    write_png(c.out, result.grid);
    log::info(log::format("wrote %s (%zu pose(s)%s)", c.out.c_str(), request.poses.size(),
                          with_base ? ", with base row" : ""));
    return 0;
  }

  // Coefficient sweep: one column per value, one row per pose.
  const auto values = parse_list(sweep, "--alpha-sweep");
  std::vector<std::vector<torch::Tensor>> rows(request.poses.size());
  for (double v : values) {
    EditRequest r = request;
    r.grid = false;
    r.with_base = false;
    if (sweep_group == "all" || sweep_group == "coarse") r.alphas.coarse = v;
    if (sweep_group == "all" || sweep_group == "medium") r.alphas.medium = v;
    if (sweep_group == "all" || sweep_group == "fine") r.alphas.fine = v;
    auto result = run_edit(theta, hyper, *embedders.joint, r);
    for (size_t i = 0; i < rows.size(); ++i) rows[i].push_back(result.edited[i]);
  }
  write_png(c.out, image_grid(rows));
  log::info(log::format("wrote %s (%zu columns x %zu rows)", c.out.c_str(), values.size(),
                        rows.size()));
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& prompt_specs,
             const std::string& alphas, int identities, double override_yaw, bool against_base,
             bool seed_given) {
  auto cfg = maybe_config(c.config);
  EvalConfig ec = cfg.evaluation;
  if (identities > 0) ec.n_identities = identities;
  if (seed_given) ec.seed = c.seed;
  if (!std::isnan(override_yaw)) ec.side_yaw_override = override_yaw;
  ec.id_against_base = against_base;

  auto base = load_generator(c.generator_ckpt);
  GeneratorParams evaluated = base;
  Json echo = ec.to_json();
  echo["generator_manifest_hash"] = manifest_hash(generator_manifest(base));
  if (!c.hyper_ckpt.empty()) {
    auto prompts = parse_prompts(prompt_specs);
    if (prompts.empty()) throw InvalidInput("--hyper-ckpt given without --prompts");
    auto hyper = load_hyper(c.hyper_ckpt, base);
    auto embedders = load_embedders(cfg.embedders);
    torch::NoGradGuard no_grad;
    const auto a = parse_alphas(alphas);
    evaluated = compose_edit(base, hyper, prompts, a, *embedders.joint);
    echo["hyper_manifest_hash"] = manifest_hash(hyper_manifest(hyper));
    Json pj = Json::array();
    for (const auto& [level, p] : prompts) pj.push_back(prompt_to_json(p));
    echo["prompts"] = pj;
    echo["alphas"] = {a.coarse, a.medium, a.fine};
  } else if (against_base) {
    throw InvalidInput("--id-against-base needs an edit (--hyper-ckpt and --prompts)");
  }
  echo["depth_resolution"] = ec.depth_res;
  echo["id_resolution"] = ec.id_res > 0 ? ec.id_res : base.config.image_res();

  auto embedders = load_embedders(cfg.embedders);
  auto depth = depth_consistency(evaluated, ec);
  auto id = id_consistency(evaluated, *embedders.identity, ec, &base);
  auto report = build_report(depth, id, echo);
  write_text(c.out, report.to_json().dump(2) + "\n");
  log::info(log::format(
      "depth error %.4f (x100 scene units, %d skipped)  id similarity %.4f (%d skipped)",
      report.depth_error_mean, report.depth_skipped, report.id_similarity_mean, report.id_skipped));
  return 0;
}

int cmd_render(const Common& c, const std::string& poses, const std::string& depth_out) {
  auto theta = load_generator(c.generator_ckpt);
  auto z = sample_z(theta.config, c.seed, theta.dtype());
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> images, depths;
  for (double yaw : parse_list(poses, "--poses")) {
    CameraPose pose;
    pose.yaw = yaw;
    auto out = generate(theta, z, pose);
    images.push_back(out.image);
    if (!depth_out.empty()) {
      // Foreground depth mapped to [0, 1] over the bounding sphere's depth range.
      const double near = pose.radius - theta.config.bound_radius;
      auto d = ((out.depth - near) / (2.0 * theta.config.bound_radius)).clamp(0.0, 1.0);
      d = torch::where(out.foreground, 1.0 - d, torch::zeros_like(d));
      depths.push_back(d.unsqueeze(-1).expand({-1, -1, 3}));
    }
  }
  write_png(c.out, image_grid({images}));
  if (!depth_out.empty()) write_png(depth_out, image_grid({depths}, 2, 0.0));
  log::info("wrote " + c.out);
  return 0;
}

EditService* g_service = nullptr;

int cmd_serve(const Common& c, const std::string& host, int port, int workers) {
  auto cfg = maybe_config(c.config);
  auto state = load_service_state(c.generator_ckpt, c.hyper_ckpt, cfg);
  EditService service(state, {host, port, workers});
  const int bound = service.bind();
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  log::info(log::format("serving on %s:%d (manifest %s)", host.c_str(), bound,
                        state->manifest_hash.c_str()));
  std::cout << "listening " << host << ":" << bound << std::endl;
  service.listen();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided editing of a toy 3D-aware portrait generator"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool gen, bool hyper) {
    sub->add_option("--config", common.config, "experiment JSON");
    if (gen) sub->add_option("--generator-ckpt", common.generator_ckpt)->required();
    if (hyper) sub->add_option("--hyper-ckpt", common.hyper_ckpt)->required();
    sub->add_option("--seed", common.seed);
    sub->add_option("--out", common.out)->required();
  };

  int iterations = -1, steps = -1, identities = 0, port = 8080, workers = 4;
  std::vector<std::string> prompts;
  std::string alphas = "1,1,1", poses = "-0.4,-0.2,0,0.2,0.4", sweep, sweep_group = "all";
  std::string preset, depth_out, host = "127.0.0.1";
  bool with_base = false, against_base = false;
  double override_yaw = std::nan("");

  auto* pretrain = app.add_subcommand("pretrain", "distill the procedural head family into a generator");
  add_common(pretrain, false, false);
  pretrain->add_option("--iterations", iterations);

  auto* train_cmd = app.add_subcommand("train", "train a hyper-module; --out is a directory");
  add_common(train_cmd, true, false);
  train_cmd->add_option("--steps", steps);

  auto* edit = app.add_subcommand("edit", "render an edit as a PNG grid");
  add_common(edit, true, true);
  edit->add_option("--prompts", prompts, "level:src:tgt (repeatable)");
  edit->add_option("--alphas", alphas, "c,m,f");
  edit->add_option("--poses", poses, "yaw1,yaw2,...");
  edit->add_flag("--with-base", with_base);
  edit->add_option("--alpha-sweep", sweep, "values, one column each");
  edit->add_option("--sweep-group", sweep_group)->check(CLI::IsMember({"all", "coarse", "medium", "fine"}));
  edit->add_option("--style-preset", preset);

  std::string eval_hyper;
  auto* eval = app.add_subcommand("eval", "3D-consistency report (JSON)");
  eval->add_option("--config", common.config);
  eval->add_option("--generator-ckpt", common.generator_ckpt)->required();
  eval->add_option("--hyper-ckpt", common.hyper_ckpt);
  auto* eval_seed = eval->add_option("--seed", common.seed);
  eval->add_option("--out", common.out)->required();
  eval->add_option("--prompts", prompts);
  eval->add_option("--alphas", alphas);
  eval->add_option("--identities", identities);
  eval->add_option("--side-yaw", override_yaw, "fixed side yaw instead of random");
  eval->add_flag("--id-against-base", against_base);

  auto* render = app.add_subcommand("render", "render the base generator");
  add_common(render, true, false);
  render->add_option("--poses", poses);
  render->add_option("--depth-out", depth_out);

  auto* serve = app.add_subcommand("serve", "HTTP edit service");
  serve->add_option("--config", common.config);
  serve->add_option("--generator-ckpt", common.generator_ckpt)->required();
  serve->add_option("--hyper-ckpt", common.hyper_ckpt)->required();
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--workers", workers);

  CLI11_PARSE(app, argc, argv);
  const bool seed_given = train_cmd->count("--seed") > 0 || eval_seed->count() > 0;

  try {
    if (*pretrain) return cmd_pretrain(common, iterations);
    if (*train_cmd) return cmd_train(common, steps, seed_given);
    if (*edit) return cmd_edit(common, prompts, alphas, poses, with_base, sweep, sweep_group, preset);
    if (*eval) {
      return cmd_eval(common, prompts, alphas, identities, override_yaw, against_base, seed_given);
    }
    if (*render) return cmd_render(common, poses, depth_out);
    if (*serve) return cmd_serve(common, host, port, workers);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
