#ifndef ROOMDQN_H
#define ROOMDQN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RdqnStatus {
  RDQN_STATUS_OK = 0,
  RDQN_STATUS_NULL_POINTER = 1,
  RDQN_STATUS_INVALID_ARGUMENT = 2,
  RDQN_STATUS_IO = 3,
  RDQN_STATUS_PARSE = 4,
  RDQN_STATUS_VALIDATION = 5,
  RDQN_STATUS_EPISODE_FINISHED = 6,
  RDQN_STATUS_WEIGHT_FORMAT = 7,
  RDQN_STATUS_PANIC = 8,
  RDQN_STATUS_OTHER = 9,
} RdqnStatus;

/**
 * An environment with its current episode state.
 */
typedef struct RdqnEnv RdqnEnv;

/**
 * A Q-network loaded from a checkpoint.
 */
typedef struct RdqnPolicy RdqnPolicy;

/**
 * A validated scene.
 */
typedef struct RdqnScene RdqnScene;

/**
 * Axis-aligned rectangle by center and size.
 */
typedef struct RdqnRect {
  double cx;
  double cy;
  double w;
  double h;
} RdqnRect;

typedef struct RdqnStep {
  double r1;
  double r2;
  double r3;
  double total;
  bool rejected;
  bool done;
  bool success;
  double center_x;
  double center_y;
  /**
   * IoU of the movable with the goal after the step.
   */
  double iou;
} RdqnStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rdqn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rdqn_version(void);

/**
 * Writes the intersection over union of `a` and `b` to `out`.
 *
 * # Safety
 * All pointers must be valid for the access they are used for.
 */
enum RdqnStatus rdqn_iou(const struct RdqnRect *a, const struct RdqnRect *b, double *out);

/**
 * Generates a scene of `room_type` (e.g. "bedroom") from `seed`.
 *
 * # Safety
 * `room_type` must be a NUL-terminated string; `out` must be writable.
 */
enum RdqnStatus rdqn_scene_generate(const char *room_type, uint64_t seed, struct RdqnScene **out);

/**
 * Loads and validates a scene JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RdqnStatus rdqn_scene_load(const char *path, struct RdqnScene **out);

/**
 * Writes the scene as JSON.
 *
 * # Safety
 * `scene` must come from this library; `path` must be a NUL-terminated string.
 */
enum RdqnStatus rdqn_scene_save(const struct RdqnScene *scene, const char *path);

/**
 * Copies the indoor area and goal rectangles.
 *
 * # Safety
 * `scene` must come from this library; `indoor` and `goal` may be NULL.
 */
enum RdqnStatus rdqn_scene_rects(const struct RdqnScene *scene,
                                 struct RdqnRect *indoor,
                                 struct RdqnRect *goal);

/**
 * Releases a scene. NULL is ignored.
 *
 * # Safety
 * `scene` must come from this library and not be used afterwards.
 */
void rdqn_scene_free(struct RdqnScene *scene);

/**
 * Starts an episode with default parameters. `test_mode` selects test
 * boundary semantics.
 *
 * # Safety
 * `scene` must come from this library; `out` must be writable.
 */
enum RdqnStatus rdqn_env_new(const struct RdqnScene *scene,
                             bool test_mode,
                             double start_x,
                             double start_y,
                             struct RdqnEnv **out);

/**
 * Applies `action` (0 left, 1 right, 2 up, 3 down).
 *
 * # Safety
 * `env` must come from this library; `out` must be writable.
 */
enum RdqnStatus rdqn_env_step(struct RdqnEnv *env, uint32_t action, struct RdqnStep *out);

/**
 * Writes the 6-channel observation (channel-major, values 0 or 1) into
 * `buf`, which must hold `6 * height * width` floats.
 *
 * # Safety
 * `env` must come from this library; `buf` must be valid for `len` floats.
 */
enum RdqnStatus rdqn_env_observe(const struct RdqnEnv *env,
                                 size_t height,
                                 size_t width,
                                 float *buf,
                                 size_t len);

/**
 * # Safety
 * `env` must come from this library and not be used afterwards.
 */
void rdqn_env_free(struct RdqnEnv *env);

/**
 * Loads the Q-network of a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RdqnStatus rdqn_policy_load(const char *path, struct RdqnPolicy **out);

/**
 * Greedy action of `policy` in the current state of `env`.
 *
 * # Safety
 * `policy` and `env` must come from this library; `action` must be writable.
 */
enum RdqnStatus rdqn_policy_act(const struct RdqnPolicy *policy,
                                const struct RdqnEnv *env,
                                uint32_t *action);

/**
 * # Safety
 * `policy` must come from this library and not be used afterwards.
 */
void rdqn_policy_free(struct RdqnPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROOMDQN_H */
