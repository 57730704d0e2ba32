#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "dyglnet/dyglnet.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

static const char* kTiny = "stage_channels = 8,16,32,64\ninput_size = 32\n";

static void test_status_names(void) {
  EXPECT(strcmp(dygl_status_name(DYGL_OK), "ok") == 0);
  EXPECT(strcmp(dygl_status_name(DYGL_ERR_FORMAT), "format") == 0);
  EXPECT(strcmp(dygl_status_name(DYGL_ERR_INVALID_ARGUMENT), "invalid argument") == 0);
  EXPECT(dygl_status_name(999) != NULL);
  EXPECT(dygl_checkpoint_version() == 1);
}

static void test_default_config(void) {
  size_t needed = 0;
  EXPECT(dygl_default_config(NULL, 0, &needed) == DYGL_OK);
  EXPECT(needed > 1);
  char* buf = malloc(needed);
  EXPECT(dygl_default_config(buf, needed, &needed) == DYGL_OK);
  EXPECT(strlen(buf) + 1 == needed);
  EXPECT(strstr(buf, "stage_channels") != NULL);
  free(buf);
}

static void test_build_and_forward(void) {
  dygl_model* m = NULL;
  EXPECT(dygl_model_build(kTiny, 7, &m) == DYGL_OK);
  EXPECT(m != NULL);
  uint64_t count = 0;
  EXPECT(dygl_model_param_count(m, &count) == DYGL_OK);
  EXPECT(count > 0);

  enum { N = 2, H = 32, W = 32 };
  float* x = malloc(sizeof(float) * N * 3 * H * W);
  for (int i = 0; i < N * 3 * H * W; ++i) x[i] = (float)sin(0.01 * i);
  float* y = malloc(sizeof(float) * N * H * W);
  float* y2 = malloc(sizeof(float) * N * H * W);
  EXPECT(dygl_model_forward(m, x, N, H, W, y, N * H * W) == DYGL_OK);
  EXPECT(dygl_model_forward(m, x, N, H, W, y2, N * H * W) == DYGL_OK);
  EXPECT(memcmp(y, y2, sizeof(float) * N * H * W) == 0);
  int finite = 1;
  for (int i = 0; i < N * H * W; ++i) finite &= isfinite(y[i]) != 0;
  EXPECT(finite);

  EXPECT(dygl_model_forward(m, x, N, H, W, y, N * H * W - 1) == DYGL_ERR_DIMENSION);
  EXPECT(strlen(dygl_last_error()) > 0);
  EXPECT(dygl_model_forward(m, x, N, 30, 30, y, N * 30 * 30) == DYGL_ERR_DIMENSION);
  EXPECT(dygl_model_forward(m, NULL, N, H, W, y, N * H * W) == DYGL_ERR_INVALID_ARGUMENT);
  EXPECT(dygl_model_forward(NULL, x, N, H, W, y, N * H * W) == DYGL_ERR_INVALID_ARGUMENT);

  const char* path = "capi_test.ckpt";
  EXPECT(dygl_model_save(m, path) == DYGL_OK);
  dygl_model* loaded = NULL;
  EXPECT(dygl_model_load(path, &loaded) == DYGL_OK);
  uint64_t count2 = 0;
  EXPECT(dygl_model_param_count(loaded, &count2) == DYGL_OK);
  EXPECT(count2 == count);
  EXPECT(dygl_model_forward(loaded, x, N, H, W, y2, N * H * W) == DYGL_OK);
  EXPECT(memcmp(y, y2, sizeof(float) * N * H * W) == 0);

  size_t needed = 0;
  EXPECT(dygl_model_config(loaded, NULL, 0, &needed) == DYGL_OK);
  char small[4];
  EXPECT(dygl_model_config(loaded, small, sizeof small, &needed) == DYGL_OK);
  EXPECT(needed > sizeof small);
  dygl_model_free(loaded);
  remove(path);

  FILE* f = fopen(path, "wb");
  static const unsigned char header[] = {'D', 'Y', 'G', 'L', 1, 0, 0, 0, 5};
  fwrite(header, 1, sizeof header, f);
  fclose(f);
  loaded = NULL;
  EXPECT(dygl_model_load(path, &loaded) == DYGL_ERR_FORMAT);
  EXPECT(loaded == NULL);
  remove(path);
  EXPECT(dygl_model_load("does/not/exist.ckpt", &loaded) == DYGL_ERR_IO);
  EXPECT(dygl_model_save(m, "does/not/exist/x.ckpt") == DYGL_ERR_IO);

  dygl_model_free(m);
  dygl_model_free(NULL);
  free(x);
  free(y);
  free(y2);
}

static void test_bad_config(void) {
  dygl_model* m = NULL;
  EXPECT(dygl_model_build("no_such_key = 1\n", 1, &m) == DYGL_ERR_CONFIGURATION);
  EXPECT(m == NULL);
  EXPECT(strstr(dygl_last_error(), "no_such_key") != NULL);
  EXPECT(dygl_model_build(kTiny, 1, NULL) == DYGL_ERR_INVALID_ARGUMENT);
}

static void on_row(const dygl_gradcheck_row* r, void* user) {
  int* rows = user;
  ++*rows;
  EXPECT(strcmp(r->block, "dyt") == 0);
  EXPECT(r->max_rel_err < 1e-4);
  EXPECT(r->passed);
}

static void test_gradcheck(void) {
  int rows = 0, all = 0;
  EXPECT(dygl_gradcheck("dyt", 2, on_row, &rows, &all) == DYGL_OK);
  EXPECT(rows == 2);
  EXPECT(all == 1);
  EXPECT(dygl_gradcheck("nonsense", 1, NULL, NULL, &all) == DYGL_ERR_CONFIGURATION);
  EXPECT(strstr(dygl_gradcheck_blocks(), "dyfusionup") != NULL);
}

int main(void) {
  test_status_names();
  test_default_config();
  test_build_and_forward();
  test_bad_config();
  test_gradcheck();
  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  printf("capi: all checks passed\n");
  return 0;
}
