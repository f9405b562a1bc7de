#ifndef GTSPARSE_H
#define GTSPARSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum GtStatus {
  GT_STATUS_OK = 0,
  GT_STATUS_NULL_POINTER = 1,
  GT_STATUS_INVALID_ARGUMENT = 2,
  GT_STATUS_IO = 3,
  GT_STATUS_FORMAT = 4,
  GT_STATUS_NUMERIC = 5,
  GT_STATUS_CONSTRUCTION = 6,
  GT_STATUS_BUFFER_TOO_SMALL = 7,
  GT_STATUS_PANIC = 8,
} GtStatus;

// A loaded or generated graph with features, labels and split.
typedef struct GtGraph GtGraph;

// A trained final network together with the scores it samples from.
typedef struct GtModel GtModel;

// An augmented attention pattern.
typedef struct GtPattern GtPattern;

// Attention scores of a trained estimator.
typedef struct GtScores GtScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gt_version(void);

// Message of the last failed call on this thread, empty after a success.
// Valid until the next `gt_*` call on the same thread.
const char *gt_last_error_message(void);

// Loads a dataset directory (edges.tsv, features.csv, labels.csv, optional split.csv).
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum GtStatus gt_graph_load(const char *dir, struct GtGraph **out);

// Generates the two-color bridge task with default sizes.
//
// # Safety
// `out` must be a valid pointer.
enum GtStatus gt_graph_generate_bridge(uint64_t seed, struct GtGraph **out);

// Node count, 0 for a null handle.
//
// # Safety
// `g` must be null or a live graph handle.
size_t gt_graph_num_nodes(const struct GtGraph *g);

// # Safety
// `g` must be null or a handle not yet freed.
void gt_graph_free(struct GtGraph *g);

// Builds an expander of `cycles` Hamiltonian cycles and the augmented
// pattern with `layers` identical layers.
//
// # Safety
// `g` must be a live graph handle and `out` a valid pointer.
enum GtStatus gt_pattern_build(const struct GtGraph *g,
                               size_t cycles,
                               size_t layers,
                               uint64_t seed,
                               struct GtPattern **out);

// Augmented attention edges per layer.
//
// # Safety
// `p` must be null or a live pattern handle.
size_t gt_pattern_num_edges(const struct GtPattern *p);

// # Safety
// `p` must be null or a handle not yet freed.
void gt_pattern_free(struct GtPattern *p);

// Trains the one-head estimator with default settings apart from the
// arguments and returns its attention scores.
//
// # Safety
// Handles must be live and `out` a valid pointer.
enum GtStatus gt_estimator_train(const struct GtGraph *g,
                                 const struct GtPattern *p,
                                 size_t width,
                                 size_t epochs,
                                 uint64_t seed,
                                 struct GtScores **out);

// Loads scores written by `gt_scores_save` or the command line tool.
//
// # Safety
// `path` must be a NUL-terminated string, `g` a live graph handle and
// `out` a valid pointer.
enum GtStatus gt_scores_load(const char *path, const struct GtGraph *g, struct GtScores **out);

// Writes scores in the text format.
//
// # Safety
// `s` must be a live handle and `path` a NUL-terminated string.
enum GtStatus gt_scores_save(const struct GtScores *s, const char *path);

// # Safety
// `s` must be null or a live handle.
size_t gt_scores_num_layers(const struct GtScores *s);

// Copies the keys and scores of one row (layer counted from 0). `len_out`
// receives the row length even when the buffers are too small.
//
// # Safety
// `keys` and `values` must hold `cap` elements; `len_out` may be null.
enum GtStatus gt_scores_row(const struct GtScores *s,
                            size_t layer,
                            size_t node,
                            size_t *keys,
                            double *values,
                            size_t cap,
                            size_t *len_out);

// Mean attention entropy of each layer.
//
// # Safety
// `out` must hold `cap` values; `len_out` may be null.
enum GtStatus gt_scores_entropy(const struct GtScores *s, double *out, size_t cap, size_t *len_out);

// Average share of augmented edges kept with `degs[ℓ]` keys per query.
//
// # Safety
// `degs` must hold `num_degs` values and `out` be valid.
enum GtStatus gt_edge_percent(const struct GtScores *s,
                              const size_t *degs,
                              size_t num_degs,
                              size_t m_aug,
                              double *out);

// # Safety
// `s` must be null or a handle not yet freed.
void gt_scores_free(struct GtScores *s);

// Annealed temperature at `epoch` (counted from 1).
//
// # Safety
// `out` must be a valid pointer.
enum GtStatus gt_temperature_at(size_t lambda,
                                double gamma,
                                double floor,
                                size_t epoch,
                                double *out);

// Draws `min(k, n)` distinct indices with weighted reservoir sampling;
// indices come back sorted.
//
// # Safety
// `weights` must hold `n` values, `out` `cap` values; `len_out` may be null.
enum GtStatus gt_reservoir_sample(const double *weights,
                                  size_t n,
                                  size_t k,
                                  uint64_t seed,
                                  size_t *out,
                                  size_t cap,
                                  size_t *len_out);

// Trains the wide network on sampled layers with `degs` keys per query and
// default settings apart from the arguments.
//
// # Safety
// Handles must be live, `degs` must hold `num_degs` values and `out` be valid.
enum GtStatus gt_final_train(const struct GtGraph *g,
                             const struct GtScores *s,
                             const size_t *degs,
                             size_t num_degs,
                             size_t width,
                             size_t epochs,
                             uint64_t seed,
                             struct GtModel **out);

// Width of a probability row for this model.
//
// # Safety
// `m` must be null or a live handle.
size_t gt_model_num_outputs(const struct GtModel *m);

// Class probabilities for `nodes`, row-major, averaged over `samples`
// samplings. `out` needs `num_nodes · gt_model_num_outputs` values.
//
// # Safety
// Handles must be live; `nodes` must hold `num_nodes` values and `out` `cap`.
enum GtStatus gt_model_predict(const struct GtModel *m,
                               const struct GtGraph *g,
                               const size_t *nodes,
                               size_t num_nodes,
                               size_t samples,
                               size_t batch_size,
                               uint64_t seed,
                               double *out,
                               size_t cap,
                               size_t *len_out);

// # Safety
// `m` must be null or a handle not yet freed.
void gt_model_free(struct GtModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GTSPARSE_H */
