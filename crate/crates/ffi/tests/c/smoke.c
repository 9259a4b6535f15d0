#include <stdio.h>
#include <string.h>

#include "relu_regions.h"

#define CHECK(call)                                                              \
  do {                                                                           \
    RrStatus s_ = (call);                                                        \
    if (s_ != RR_STATUS_OK) {                                                    \
      fprintf(stderr, "%s failed with %d: %s\n", #call, (int)s_,                 \
              rr_last_error_message());                                          \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  const char *json =
      "{\"format_version\":1,\"input_dim\":1,\"layers\":["
      "{\"rows\":1,\"cols\":1,\"relu\":true,\"weights\":[1.0],\"bias\":[0.0]}]}";
  RrNetwork *net = NULL;
  CHECK(rr_network_from_json(json, &net));

  double center = 1.0;
  RrBoundReport *report = NULL;
  size_t c = 99;
  CHECK(rr_local_region_bound(net, &center, 1, 0.5, &report));
  CHECK(rr_report_c(report, &c));
  rr_report_free(report);
  CHECK(rr_local_region_bound(net, &center, 1, 2.0, &report));
  size_t c_wide = 99;
  CHECK(rr_report_c(report, &c_wide));
  rr_report_free(report);

  double a = -1.0, b = 3.0;
  size_t pieces = 0;
  CHECK(rr_segment_piece_count(net, &a, &b, 1, &pieces));

  double two[2] = {0.0, 0.0};
  RrStatus mismatch = rr_local_region_bound(net, two, 2, 0.5, &report);
  const char *msg = rr_last_error_message();

  printf("C=%zu C_wide=%zu pieces=%zu mismatch=%d msg=%s\n", c, c_wide, pieces,
         (int)mismatch, msg ? msg : "(null)");
  rr_network_free(net);
  return 0;
}
