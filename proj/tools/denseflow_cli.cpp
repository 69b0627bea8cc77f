// Copyright 2026 The denseflow-cpp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line driver over the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "denseflow/denseflow.h"

namespace {

struct Failure {
  df_status code;
};

void check(df_status st) {
  if (st != DF_OK) {
    std::cerr << "error: " << df_last_error() << "\n";
    throw Failure{st};
  }
}

void usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  throw Failure{DF_ERR_USAGE};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  df_free_string(s);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read " << path << "\n";
    throw Failure{DF_ERR_DATA};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_config(const std::string& text) {
  std::cout << "# resolved config\n" << text;
  if (!text.empty() && text.back() != '\n') std::cout << "\n";
  std::cout << "# end config\n" << std::flush;
}

template <typename Handle, void (*Free)(Handle*)>
struct Owned {
  Handle* ptr = nullptr;
  ~Owned() { Free(ptr); }
};
using Model = Owned<df_model, df_model_free>;
using Dataset = Owned<df_dataset, df_dataset_free>;

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::vector<std::string> overrides;  // "section.key=value"
  bool seed_set = false;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--preset", preset, "built-in preset applied before --config");
    cmd->add_option("--set", overrides, "override as section.key=value (repeatable)");
    cmd->add_option("--seed", seed, "seed for model initialisation and training")
        ->each([this](const std::string&) { seed_set = true; });
  }

  // --config contents followed by the --set overrides.
  std::string override_text() const {
    std::string text = config_path.empty() ? "" : slurp(config_path);
    for (const auto& o : overrides) {
      const auto dot = o.find('.');
      const auto eq = o.find('=');
      if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
        usage_error("--set expects section.key=value, got '" + o + "'");
      }
      text += "\n[" + o.substr(0, dot) + "]\n" + o.substr(dot + 1, eq - dot - 1) + " = " + o.substr(eq + 1) + "\n";
    }
    return text;
  }

  std::string resolve() const {
    std::string text = override_text();
    if (seed_set) {
      text += "\n[model]\nseed = " + std::to_string(seed) + "\n[train]\nseed = " + std::to_string(seed) + "\n";
    }
    char* out = nullptr;
    check(df_config_resolve(preset.empty() ? nullptr : preset.c_str(), text.c_str(), &out));
    return take(out);
  }

  bool any() const { return !config_path.empty() || !preset.empty() || !overrides.empty() || seed_set; }
};

void write_ppm(const std::string& path, const std::vector<std::uint8_t>& hwc, int height, int width, int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    throw Failure{DF_ERR_DATA};
  }
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t p = 0; p < static_cast<std::size_t>(height) * width; ++p) {
    for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = hwc[p * channels + (channels == 3 ? c : std::min(c, channels - 1))];
  }
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

int run(int argc, char** argv) {
  CLI::App app{"denseflow: normalizing flows with cross-unit noise augmentation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(df_version()));

  // train
  auto* train = app.add_subcommand("train", "train a model on a DFIM dataset");
  ConfigFlags train_cfg;
  train_cfg.add(train);
  std::string train_data, train_out, train_resume;
  train->add_option("--data", train_data, "DFIM dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "checkpoint written during and after training")->required();
  train->add_option("--resume", train_resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  // eval
  auto* eval = app.add_subcommand("eval", "bits per dimension of a dataset under a checkpoint");
  std::string eval_ckpt, eval_data;
  int mc_samples = 1;
  std::uint64_t eval_seed = 0;
  bool eval_json = false;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "DFIM dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--mc-samples", mc_samples, "noise draws per image")->capture_default_str()->check(
      CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "seed of the dequantisation and noise draws")->capture_default_str();
  eval->add_flag("--json", eval_json, "print the report as JSON");

  // sample
  auto* sample = app.add_subcommand("sample", "draw images from a checkpoint");
  std::string sample_ckpt, sample_out;
  int sample_n = 16;
  double temperature = 0.8;
  std::uint64_t sample_seed = 0;
  sample->add_option("--ckpt", sample_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", sample_n, "number of images")->capture_default_str()->check(CLI::PositiveNumber);
  sample->add_option("--temperature", temperature, "prior standard deviation scale")->capture_default_str()->check(
      CLI::NonNegativeNumber);
  sample->add_option("--out", sample_out, "output directory for PPM files")->required();
  sample->add_option("--seed", sample_seed, "sampling seed")->capture_default_str();

  // verify
  auto* verify = app.add_subcommand("verify", "run the property suite");
  int trials = 100;
  std::uint64_t verify_seed = 0;
  verify->add_option("--trials", trials, "random inputs per round-trip check")->capture_default_str()->check(
      CLI::PositiveNumber);
  verify->add_option("--seed", verify_seed, "suite seed")->capture_default_str();

  // import
  auto* import = app.add_subcommand("import", "convert raw u8 planar images, or synthesise textures, into DFIM");
  std::string raw_path, import_out;
  std::int64_t import_n = 0, synth_n = 0;
  int channels = 3, height = 0, width = 0;
  std::uint64_t import_seed = 0;
  auto* raw_opt = import->add_option("--raw", raw_path, "raw planar (NCHW) u8 file")->check(CLI::ExistingFile);
  auto* synth_opt = import->add_option("--synth", synth_n, "generate this many procedural textures instead");
  raw_opt->excludes(synth_opt);
  import->add_option("--n", import_n, "image count of the raw file");
  import->add_option("--channels", channels, "channels")->capture_default_str();
  import->add_option("--height", height, "height")->required();
  import->add_option("--width", width, "width")->required();
  import->add_option("--seed", import_seed, "generator seed for --synth")->capture_default_str();
  import->add_option("--out", import_out, "DFIM output")->required();

  // info
  auto* info = app.add_subcommand("info", "parameter counts and shape trace");
  ConfigFlags info_cfg;
  info_cfg.add(info);
  std::string info_ckpt;
  info->add_option("--ckpt", info_ckpt, "checkpoint instead of a configuration")->check(CLI::ExistingFile);
  bool list_presets = false;
  info->add_flag("--presets", list_presets, "list built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : DF_ERR_USAGE;
  }

  if (train->parsed()) {
    std::string config;
    if (train_resume.empty()) {
      config = train_cfg.resolve();
      print_config(config);
    } else {
      Model ck;
      check(df_model_load(train_resume.c_str(), &ck.ptr));
      char* base = nullptr;
      check(df_model_config(ck.ptr, &base));
      config = take(base);
      if (!train_cfg.preset.empty()) usage_error("--preset cannot be combined with --resume");
      if (train_cfg.seed_set) usage_error("--seed cannot be combined with --resume");
      config += "\n" + train_cfg.override_text();
      char* resolved = nullptr;
      check(df_config_resolve(nullptr, config.c_str(), &resolved));
      config = take(resolved);
      print_config(config);
    }
    Dataset data;
    check(df_dataset_read(train_data.c_str(), &data.ptr));
    const auto log = [](const df_step_log* s, void*) {
      std::printf("step %lld epoch %d lr %.6g bpd %.4f grad_norm %.4g min_invconv %.4g min_scale %.4g\n",
                  static_cast<long long>(s->step), s->epoch, s->lr, s->bpd, s->grad_norm, s->min_invconv,
                  s->min_coupling_scale);
      std::fflush(stdout);
    };
    check(df_train(config.c_str(), data.ptr, train_out.c_str(), train_resume.empty() ? nullptr : train_resume.c_str(),
                   log, nullptr));
    std::cout << "wrote " << train_out << "\n";
    return 0;
  }

  if (eval->parsed()) {
    Model model;
    check(df_model_load(eval_ckpt.c_str(), &model.ptr));
    char* cfg = nullptr;
    check(df_model_config(model.ptr, &cfg));
    print_config(take(cfg));
    std::cout << "# mc_samples = " << mc_samples << ", seed = " << eval_seed << "\n";
    Dataset data;
    check(df_dataset_read(eval_data.c_str(), &data.ptr));
    char* report = nullptr;
    check(df_evaluate(model.ptr, data.ptr, mc_samples, eval_seed, eval_json ? 1 : 0, &report));
    const auto text = take(report);
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
    return 0;
  }

  if (sample->parsed()) {
    Model model;
    check(df_model_load(sample_ckpt.c_str(), &model.ptr));
    char* cfg = nullptr;
    check(df_model_config(model.ptr, &cfg));
    print_config(take(cfg));
    std::cout << "# n = " << sample_n << ", temperature = " << temperature << ", seed = " << sample_seed << "\n";
    Dataset out;
    check(df_sample(model.ptr, sample_n, temperature, sample_seed, &out.ptr));
    std::int64_t n = 0;
    std::int32_t c = 0, h = 0, w = 0;
    check(df_dataset_shape(out.ptr, &n, &c, &h, &w));
    std::error_code ec;
    std::filesystem::create_directories(sample_out, ec);
    if (ec) {
      std::cerr << "error: cannot create " << sample_out << ": " << ec.message() << "\n";
      return DF_ERR_DATA;
    }
    std::vector<std::uint8_t> img(static_cast<std::size_t>(c) * h * w);
    for (std::int64_t i = 0; i < n; ++i) {
      check(df_dataset_image(out.ptr, i, img.data(), img.size()));
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%04lld.ppm", static_cast<long long>(i));
      write_ppm((std::filesystem::path(sample_out) / name).string(), img, h, w, c);
    }
    std::cout << "wrote " << n << " images to " << sample_out << "\n";
    return 0;
  }

  if (verify->parsed()) {
    std::cout << "# verify trials = " << trials << ", seed = " << verify_seed << "\n" << std::flush;
    std::int32_t failed = 0;
    const auto line = [](const char* name, int passed, const char* detail, double seconds, void*) {
      std::printf("%s %s (%s, %.2fs)\n", passed ? "PASS" : "FAIL", name, detail, seconds);
      std::fflush(stdout);
    };
    const df_status st = df_verify(trials, verify_seed, line, nullptr, &failed);
    if (st == DF_ERR_VERIFY) {
      std::cout << failed << " check(s) failed\n";
      return DF_ERR_VERIFY;
    }
    check(st);
    std::cout << "all checks passed\n";
    return 0;
  }

  if (import->parsed()) {
    Dataset data;
    if (!raw_path.empty()) {
      if (import_n <= 0) usage_error("--raw needs --n");
      std::cout << "# import raw = " << raw_path << ", n = " << import_n << ", shape = " << channels << "x" << height
                << "x" << width << "\n";
      check(df_dataset_from_planar(raw_path.c_str(), import_n, channels, height, width, &data.ptr));
    } else if (synth_n > 0) {
      std::cout << "# import synth = " << synth_n << ", shape = " << channels << "x" << height << "x" << width
                << ", seed = " << import_seed << "\n";
      check(df_dataset_synth(synth_n, height, width, channels, import_seed, &data.ptr));
    } else {
      usage_error("import needs --raw or a positive --synth");
    }
    check(df_dataset_write(data.ptr, import_out.c_str()));
    std::cout << "wrote " << import_out << "\n";
    return 0;
  }

  if (info->parsed()) {
    if (list_presets) {
      char* names = nullptr;
      check(df_config_presets(&names));
      std::cout << take(names);
      return 0;
    }
    char* plan = nullptr;
    if (!info_ckpt.empty()) {
      if (info_cfg.any()) usage_error("--ckpt cannot be combined with configuration flags");
      Model model;
      check(df_model_load(info_ckpt.c_str(), &model.ptr));
      char* cfg = nullptr;
      check(df_model_config(model.ptr, &cfg));
      print_config(take(cfg));
      check(df_model_info(model.ptr, &plan));
    } else {
      const auto config = info_cfg.resolve();
      print_config(config);
      check(df_config_plan(config.c_str(), &plan));
    }
    std::cout << take(plan);
    return 0;
  }
  return DF_ERR_USAGE;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Failure& f) {
    return static_cast<int>(f.code);
  }
}
