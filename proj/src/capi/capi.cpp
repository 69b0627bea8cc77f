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

#include "denseflow/denseflow.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "denseflow/config.hpp"
#include "denseflow/data.hpp"
#include "denseflow/errors.hpp"
#include "denseflow/estimator.hpp"
#include "denseflow/flow_model.hpp"
#include "denseflow/noise.hpp"
#include "denseflow/trainer.hpp"
#include "denseflow/verify.hpp"

#ifndef DENSEFLOW_VERSION
#define DENSEFLOW_VERSION "0.0.0"
#endif

struct df_model {
  denseflow::RunConfig config;
  std::unique_ptr<denseflow::FlowModel<float>> model;
};

struct df_dataset {
  denseflow::ImageDataset data;
};

namespace {

using namespace denseflow;

thread_local std::string last_error;

df_status fail(df_status code, const std::string& msg) {
  last_error = msg;
  return code;
}

template <typename F>
df_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return DF_OK;
  } catch (const ConfigError& e) {
    return fail(DF_ERR_USAGE, e.what());
  } catch (const ContractError& e) {
    return fail(DF_ERR_USAGE, e.what());
  } catch (const DataError& e) {
    return fail(DF_ERR_DATA, e.what());
  } catch (const ShapeError& e) {
    return fail(DF_ERR_DATA, e.what());
  } catch (const NumericError& e) {
    return fail(DF_ERR_NUMERIC, e.what());
  } catch (const NumericDomainError& e) {
    return fail(DF_ERR_NUMERIC, e.what());
  } catch (const TrainingError& e) {
    return fail(DF_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DF_ERR_INTERNAL, "unknown error");
  }
}

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(what);
}

RunConfig parse_text(const char* text) { return parse_config(text ? text : ""); }

std::string model_text(const FlowConfig& m) {
  RunConfig r;
  r.model = m;
  return format_config(r);
}

ImageDataset to_dataset(const Tensor<float>& px) {
  const auto& s = px.shape();
  std::vector<std::uint8_t> bytes(px.data().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(px.data()[i]);
  return from_planar(bytes, s[0], static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3]));
}

}  // namespace

extern "C" {

const char* df_version(void) { return DENSEFLOW_VERSION; }

const char* df_last_error(void) { return last_error.c_str(); }

void df_free_string(char* s) { std::free(s); }

df_status df_config_resolve(const char* preset_name, const char* text, char** out_config) {
  return guarded([&] {
    require(out_config != nullptr, "df_config_resolve: null output");
    const RunConfig base = preset_name ? preset(preset_name) : RunConfig{};
    *out_config = copy_string(format_config(parse_config(text ? text : "", base)));
  });
}

df_status df_config_presets(char** out_names) {
  return guarded([&] {
    require(out_names != nullptr, "df_config_presets: null output");
    std::string names;
    for (const auto& n : preset_names()) names += n + "\n";
    *out_names = copy_string(names);
  });
}

df_status df_config_plan(const char* config, char** out_plan) {
  return guarded([&] {
    require(out_plan != nullptr, "df_config_plan: null output");
    *out_plan = copy_string(plan_model(parse_text(config).model).describe());
  });
}

df_status df_model_create(const char* config, df_model** out) {
  return guarded([&] {
    require(out != nullptr, "df_model_create: null output");
    auto m = std::make_unique<df_model>();
    m->config = parse_text(config);
    m->model = std::make_unique<FlowModel<float>>(m->config.model);
    *out = m.release();
  });
}

df_status df_model_load(const char* path, df_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "df_model_load: null argument");
    auto m = std::make_unique<df_model>();
    m->model = model_from_checkpoint<float>(load_checkpoint(path), &m->config);
    *out = m.release();
  });
}

df_status df_model_save(const df_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "df_model_save: null argument");
    Checkpoint ck;
    put_model(ck, *model->model);
    ck.config = format_config(model->config);
    save_checkpoint(path, ck);
  });
}

df_status df_model_config(const df_model* model, char** out_config) {
  return guarded([&] {
    require(model != nullptr && out_config != nullptr, "df_model_config: null argument");
    *out_config = copy_string(format_config(model->config));
  });
}

df_status df_model_info(const df_model* model, char** out_plan) {
  return guarded([&] {
    require(model != nullptr && out_plan != nullptr, "df_model_info: null argument");
    *out_plan = copy_string(model->model->plan().describe());
  });
}

void df_model_free(df_model* model) { delete model; }

df_status df_dataset_read(const char* path, df_dataset** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "df_dataset_read: null argument");
    *out = new df_dataset{read_dataset(path)};
  });
}

df_status df_dataset_write(const df_dataset* data, const char* path) {
  return guarded([&] {
    require(data != nullptr && path != nullptr, "df_dataset_write: null argument");
    write_dataset(path, data->data);
  });
}

df_status df_dataset_synth(int64_t n, int32_t height, int32_t width, int32_t channels, uint64_t seed,
                           df_dataset** out) {
  return guarded([&] {
    require(out != nullptr, "df_dataset_synth: null output");
    *out = new df_dataset{synth_textures(n, height, width, channels, seed)};
  });
}

df_status df_dataset_from_planar(const char* path, int64_t n, int32_t channels, int32_t height, int32_t width,
                                 df_dataset** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "df_dataset_from_planar: null argument");
    *out = new df_dataset{from_planar(read_file(path), n, channels, height, width)};
  });
}

df_status df_dataset_shape(const df_dataset* data, int64_t* n, int32_t* channels, int32_t* height, int32_t* width) {
  return guarded([&] {
    require(data != nullptr, "df_dataset_shape: null dataset");
    if (n) *n = data->data.count;
    if (channels) *channels = data->data.channels;
    if (height) *height = data->data.height;
    if (width) *width = data->data.width;
  });
}

df_status df_dataset_image(const df_dataset* data, int64_t index, uint8_t* out, size_t size) {
  return guarded([&] {
    require(data != nullptr && out != nullptr, "df_dataset_image: null argument");
    const auto& d = data->data;
    const auto bytes = static_cast<std::size_t>(d.image_size());
    require(index >= 0 && index < static_cast<int64_t>(d.count), "df_dataset_image: index out of range");
    require(size >= bytes, "df_dataset_image: buffer too small");
    std::memcpy(out, d.pixels.data() + static_cast<std::size_t>(index) * bytes, bytes);
  });
}

void df_dataset_free(df_dataset* data) { delete data; }

df_status df_train(const char* config, const df_dataset* data, const char* out_path, const char* resume_path,
                   df_step_fn on_step, void* user) {
  return guarded([&] {
    require(data != nullptr && out_path != nullptr, "df_train: null argument");
    RunConfig run;
    std::unique_ptr<FlowModel<float>> model;
    Checkpoint ck;
    if (resume_path) {
      ck = load_checkpoint(resume_path);
      model = model_from_checkpoint<float>(ck, &run);
      if (config) {
        const RunConfig over = parse_config(config, run);
        if (model_text(over.model) != model_text(run.model)) {
          throw ConfigError("resume: [model] and [coupling] settings must match the checkpoint");
        }
        run.train = over.train;
        run.eval = over.eval;
      }
    } else {
      run = parse_text(config);
      model = std::make_unique<FlowModel<float>>(run.model);
    }
    Trainer<float> trainer(*model, data->data, run);
    if (resume_path) trainer.restore(ck);
    const auto total = trainer.total_steps();
    const auto every = std::max<std::int64_t>(1, run.train.log_every);
    trainer.run(
        [&](const StepLog& s) {
          if (!on_step || (s.step % every != 0 && s.step != total)) return;
          const df_step_log log{s.step, s.epoch, s.lr, s.bpd, s.grad_norm, s.min_invconv, s.min_coupling_scale};
          on_step(&log, user);
        },
        out_path);
  });
}

df_status df_evaluate(df_model* model, const df_dataset* data, int32_t mc_samples, uint64_t seed, int json,
                      char** out_report) {
  return guarded([&] {
    require(model != nullptr && data != nullptr && out_report != nullptr, "df_evaluate: null argument");
    require(mc_samples >= 1, "df_evaluate: mc_samples must be at least 1");
    EvalConfig cfg = model->config.eval;
    cfg.mc_samples = mc_samples;
    cfg.seed = seed;
    const auto report = evaluate(*model->model, data->data, cfg);
    *out_report = copy_string(json ? report.to_json() : report.to_text());
  });
}

df_status df_sample(const df_model* model, int32_t n, double temperature, uint64_t seed, df_dataset** out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "df_sample: null argument");
    require(n >= 1, "df_sample: n must be at least 1");
    require(temperature >= 0.0, "df_sample: temperature must be non-negative");
    Rng rng(seed);
    RngNoise<float> noise(rng);
    *out = new df_dataset{to_dataset(model->model->sample(n, static_cast<float>(temperature), noise))};
  });
}

df_status df_verify(int32_t trials, uint64_t seed, df_check_fn on_check, void* user, int32_t* failed) {
  int32_t bad = 0;
  const df_status st = guarded([&] {
    require(trials >= 1, "df_verify: trials must be at least 1");
    VerifyOptions opts;
    opts.trials = trials;
    opts.seed = seed;
    run_verify_suite(opts, [&](const CheckResult& r) {
      if (!r.passed) ++bad;
      if (on_check) on_check(r.name.c_str(), r.passed ? 1 : 0, r.detail.c_str(), r.seconds, user);
    });
  });
  if (failed) *failed = bad;
  if (st != DF_OK) return st;
  if (bad > 0) return fail(DF_ERR_VERIFY, std::to_string(bad) + " verification check(s) failed");
  return DF_OK;
}

}  // extern "C"
