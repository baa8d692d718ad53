#include "sam_c.h"

#include <exception>
#include <new>
#include <string>

#include "sam/config.hpp"
#include "sam/error.hpp"
#include "sam/runner.hpp"

extern "C" struct sam_config {
  sam::cfg::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error = "no error";

sam_status record(const std::exception& e, sam_status code) {
  g_last_error = e.what();
  return code;
}

// Runs `fn`, converting the library's exception hierarchy into status codes.
template <class F>
sam_status guarded(F&& fn) {
  try {
    fn();
    return SAM_OK;
  } catch (const sam::ConfigError& e) {
    return record(e, SAM_ERR_CONFIG);
  } catch (const sam::IoError& e) {
    return record(e, SAM_ERR_IO);
  } catch (const sam::ShapeError& e) {
    return record(e, SAM_ERR_SHAPE);
  } catch (const sam::NumericError& e) {
    return record(e, SAM_ERR_NUMERIC);
  } catch (const std::bad_alloc& e) {
    return record(e, SAM_ERR_OTHER);
  } catch (const std::exception& e) {
    return record(e, SAM_ERR_OTHER);
  } catch (...) {
    g_last_error = "unknown failure";
    return SAM_ERR_OTHER;
  }
}

sam_status run_command(const sam_config* c, void (*cmd)(const sam::cfg::ExperimentConfig&)) {
  if (!c) {
    g_last_error = "null config handle";
    return SAM_ERR_CONFIG;
  }
  return guarded([&] { cmd(c->cfg); });
}

}  // namespace

extern "C" {

const char* sam_last_error(void) { return g_last_error.c_str(); }

const char* sam_version(void) { return "1.0.0"; }

sam_status sam_config_parse(const char* json_text, sam_config** out) {
  if (!json_text || !out) {
    g_last_error = "null argument";
    return SAM_ERR_CONFIG;
  }
  *out = nullptr;
  return guarded([&] { *out = new sam_config{sam::cfg::parse_config(json_text)}; });
}

sam_status sam_config_load(const char* path, sam_config** out) {
  if (!path || !out) {
    g_last_error = "null argument";
    return SAM_ERR_CONFIG;
  }
  *out = nullptr;
  return guarded([&] { *out = new sam_config{sam::cfg::load_config(path)}; });
}

void sam_config_free(sam_config* c) { delete c; }

sam_status sam_meta_train(const sam_config* c) { return run_command(c, sam::run::cmd_meta_train); }
sam_status sam_cl_run(const sam_config* c) { return run_command(c, sam::run::cmd_cl_run); }
sam_status sam_ablate(const sam_config* c) { return run_command(c, sam::run::cmd_ablate); }
sam_status sam_fwt(const sam_config* c) { return run_command(c, sam::run::cmd_fwt); }
sam_status sam_visualize(const sam_config* c) { return run_command(c, sam::run::cmd_visualize); }
sam_status sam_report(const sam_config* c) { return run_command(c, sam::run::cmd_report); }

sam_status sam_generate_data(const char* root, uint64_t seed, int reduced) {
  if (!root) {
    g_last_error = "null data root";
    return SAM_ERR_CONFIG;
  }
  return guarded([&] { sam::run::cmd_generate_data(root, seed, reduced != 0); });
}

}  // extern "C"
