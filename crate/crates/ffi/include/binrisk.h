/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef BINRISK_H
#define BINRISK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrStatus {
  BR_STATUS_OK = 0,
  BR_STATUS_NULL_POINTER = 1,
  BR_STATUS_INVALID_UTF8 = 2,
  BR_STATUS_IO = 3,
  BR_STATUS_PARSE = 4,
  BR_STATUS_SCHEMA = 5,
  BR_STATUS_LATTICE = 6,
  BR_STATUS_LIFTING = 7,
  BR_STATUS_EMBEDDING = 8,
  BR_STATUS_GRAPH = 9,
  BR_STATUS_MODEL = 10,
  BR_STATUS_RISK = 11,
  BR_STATUS_FINGERPRINT = 12,
  BR_STATUS_METRICS = 13,
  BR_STATUS_PIPELINE = 14,
  BR_STATUS_INVALID_ARGUMENT = 15,
  BR_STATUS_PANIC = 16,
} BrStatus;

/*
 Opaque code property graph.
 */
typedef struct BrCpg BrCpg;

/*
 Opaque knowledge graph.
 */
typedef struct BrKg BrKg;

/*
 Opaque behavior lattice.
 */
typedef struct BrLattice BrLattice;

typedef struct BrThreshold {
  double tau;
  double tpr;
  double fpr;
  double j;
  /*
   False when no grid point met the FPR cap.
   */
  bool cap_satisfied;
} BrThreshold;

typedef struct BrMetrics {
  double precision;
  double recall;
  double f1;
  double mcc;
  double fpr;
  /*
   Bit set of metrics reported as 0 because their denominator was zero:
   1 precision, 2 recall, 4 f1, 8 mcc, 16 fpr.
   */
  uint32_t undefined;
} BrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or "" after a
 success. Valid until the next call into the library on this thread.
 */
const char *br_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *br_version(void);

void br_string_free(char *s);

enum BrStatus br_cpg_load(const char *path, struct BrCpg **out);

enum BrStatus br_cpg_from_json(const char *json, struct BrCpg **out);

enum BrStatus br_cpg_node_count(const struct BrCpg *cpg, size_t *out);

/*
 Whether `to` is reachable from `from` along PDG edges.
 */
enum BrStatus br_cpg_pdg_reachable(const struct BrCpg *cpg, uint64_t from, uint64_t to, bool *out);

void br_cpg_free(struct BrCpg *cpg);

enum BrStatus br_lattice_default(struct BrLattice **out);

enum BrStatus br_lattice_load(const char *path, struct BrLattice **out);

/*
 `a ⊑ b` for labels written as `Category/Action/Context` or `TOP`.
 */
enum BrStatus br_lattice_leq(const struct BrLattice *lattice,
                             const char *a,
                             const char *b,
                             bool *out);

/*
 Least upper bound of two labels, returned as a new string.
 */
enum BrStatus br_lattice_join(const struct BrLattice *lattice,
                              const char *a,
                              const char *b,
                              char **out);

void br_lattice_free(struct BrLattice *lattice);

enum BrStatus br_kg_load(const char *path, struct BrKg **out);

enum BrStatus br_kg_entity_count(const struct BrKg *kg, size_t *out);

/*
 Graphviz DOT text for the graph, without risk coloring.
 */
enum BrStatus br_kg_to_dot(const struct BrKg *kg, char **out);

/*
 Composite risk by power iteration. `inherent` and `out` hold one value
 per entity; `iterations` may be NULL.
 */
enum BrStatus br_kg_propagate(const struct BrKg *kg,
                              const double *inherent,
                              size_t len,
                              double beta,
                              double tolerance,
                              size_t max_iterations,
                              double *out,
                              size_t *iterations);

void br_kg_free(struct BrKg *kg);

enum BrStatus br_cosine(const double *a, const double *b, size_t dim, double *out);

/*
 Average best-match cosine of a fingerprint against a target. Both are
 row-major `rows × dim` matrices; target rows take entity ids 0, 1, ...
 */
enum BrStatus br_similarity(const double *target,
                            size_t target_rows,
                            const double *fingerprint,
                            size_t fingerprint_rows,
                            size_t dim,
                            double *out);

/*
 Youden-J threshold over `lo..=hi` by `step` subject to FPR ≤ `fpr_cap`.
 `labels[i]` is nonzero for malicious samples.
 */
enum BrStatus br_select_threshold(const double *scores,
                                  const uint8_t *labels,
                                  size_t len,
                                  double lo,
                                  double hi,
                                  double step,
                                  double fpr_cap,
                                  struct BrThreshold *out);

enum BrStatus br_roc_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

enum BrStatus br_classification_metrics(uint64_t tp,
                                        uint64_t fp,
                                        uint64_t tn,
                                        uint64_t fn_,
                                        struct BrMetrics *out);

/*
 Runs every stage for one CPG, writing artifacts under `out_dir`.
 `config_path` may be NULL for defaults. The report JSON is returned
 through `report_json` (free with [`br_string_free`]); `alert` is set
 when any fingerprint matched.
 */
enum BrStatus br_run_pipeline(const char *config_path,
                              const char *cpg_path,
                              const char *out_dir,
                              char **report_json,
                              bool *alert);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINRISK_H */
