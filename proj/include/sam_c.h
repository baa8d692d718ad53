/* C interface to the continual-learning toolkit. All functionality used by
 * the command-line tool flows through these entry points: opaque handles,
 * integer status codes, and a per-thread error message. */
#ifndef SAM_C_H
#define SAM_C_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SAM_OK = 0,
  SAM_ERR_CONFIG = 1,  /* invalid configuration */
  SAM_ERR_IO = 2,      /* missing/corrupt files, checksum failures */
  SAM_ERR_SHAPE = 3,   /* tensor shape violation */
  SAM_ERR_NUMERIC = 4, /* divergence / non-finite values */
  SAM_ERR_OTHER = 5
} sam_status;

/* Opaque, heap-allocated experiment configuration. */
typedef struct sam_config sam_config;

/* Message describing the most recent failure on this thread; never NULL. */
const char* sam_last_error(void);

const char* sam_version(void);

/* Parses a JSON configuration (strict: unknown keys are rejected). */
sam_status sam_config_parse(const char* json_text, sam_config** out);
sam_status sam_config_load(const char* path, sam_config** out);
void sam_config_free(sam_config* c);

/* Commands. Each reads datasets per the config, runs, and writes CSV /
 * checkpoint / image outputs under the config's output directory. */
sam_status sam_meta_train(const sam_config* c);
sam_status sam_cl_run(const sam_config* c);
sam_status sam_ablate(const sam_config* c);
sam_status sam_fwt(const sam_config* c);
sam_status sam_visualize(const sam_config* c);
sam_status sam_report(const sam_config* c);

/* Writes the procedurally generated stand-in corpora (exact on-disk dataset
 * formats) under root; reduced != 0 selects the small smoke-scale variant. */
sam_status sam_generate_data(const char* root, uint64_t seed, int reduced);

#ifdef __cplusplus
}
#endif

#endif /* SAM_C_H */
