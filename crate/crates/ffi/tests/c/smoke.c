#include <stdio.h>
#include <stdlib.h>
#include "pisa.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    PisaStatus s_ = (call);                                                \
    if (s_ != PISA_STATUS_OK) {                                            \
      char msg[256];                                                       \
      pisa_last_error_message(msg, sizeof msg);                            \
      fprintf(stderr, "%s failed: %d %s\n", #call, (int)s_, msg);          \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  PisaBundle *bundle = NULL;
  PisaResult *approx = NULL, *dense = NULL;
  CHECK(pisa_bundle_gen_clustered(0, 2, 256, 16, 8, 4.0, 0.3, &bundle));

  PisaRunOptions opts = pisa_run_options_default();
  opts.block_size = 16;
  opts.sparsity = 0.75;
  opts.streaming = true;
  CHECK(pisa_run(bundle, &opts, &approx));
  CHECK(pisa_dense(bundle, &dense));

  size_t heads = 0, rows = 0, cols = 0;
  double realized = -1.0;
  CHECK(pisa_result_shape(approx, &heads, &rows, &cols, &realized));
  if (heads != 2 || rows != 256 || cols != 16 || realized != 0.75) {
    fprintf(stderr, "unexpected shape %zu %zu %zu %f\n", heads, rows, cols, realized);
    return 1;
  }
  double *out = malloc(rows * cols * sizeof(double));
  CHECK(pisa_result_output(approx, 1, out, rows * cols));
  free(out);

  PisaErrorMetrics m;
  CHECK(pisa_compare(approx, dense, 0, &m));
  if (!(m.l1_rel > 0.0 && m.l1_rel < 0.5)) {
    fprintf(stderr, "implausible l1_rel %f\n", m.l1_rel);
    return 1;
  }

  opts.sparsity = 1.5;
  PisaResult *bad = NULL;
  if (pisa_run(bundle, &opts, &bad) != PISA_STATUS_VALIDATION || bad != NULL) {
    fprintf(stderr, "sparsity 1.5 was accepted\n");
    return 1;
  }
  char msg[128];
  if (pisa_last_error_message(msg, sizeof msg) == 0) {
    fprintf(stderr, "no error message\n");
    return 1;
  }

  pisa_result_free(approx);
  pisa_result_free(dense);
  pisa_bundle_free(bundle);
  printf("ok %s l1_rel=%.6f\n", pisa_version(), m.l1_rel);
  return 0;
}
