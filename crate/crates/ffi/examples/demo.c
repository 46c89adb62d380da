/* Loads a roadmap, seeds one vehicle on it and reports a spoofed jump. */
#include <stdio.h>
#include "spoofguard.h"

static int check(enum SgStatus st, const char *what) {
  if (st != SG_STATUS_OK) {
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)st, sg_last_error_message());
    return 1;
  }
  return 0;
}

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s MAP.json\n", argv[0]);
    return 2;
  }
  struct SgGraph *graph = NULL;
  if (check(sg_graph_load(argv[1], &graph), "load")) return 1;
  struct SgGraphCounts counts;
  sg_graph_counts(graph, &counts);
  printf("junctions %zu roads %zu\n", counts.junctions, counts.roads);

  uint64_t ids[1] = {42};
  struct SgKeyTable *keys = NULL;
  struct SgDetector *det = NULL;
  if (check(sg_keys_generate(ids, 1, 1, &keys), "keys")) return 1;
  if (check(sg_detector_new(graph, keys, 10, &det), "detector")) return 1;

  /* Two fixes on the southern edge of the bundled grid, 1 s apart, then a
     fix 0.002 degrees further west. */
  struct SgPacket fixes[3] = {
      {42, 1.3, 103.8005, 90.0, 0},
      {42, 1.3, 103.80055, 90.0, 1000},
      {42, 1.3, 103.79855, 90.0, 2000},
  };
  uint8_t buf[SG_SIGNED_LEN];
  for (int i = 0; i < 3; i++) {
    size_t n = 0;
    struct SgOutcome out;
    if (check(sg_packet_serialize(&fixes[i], buf, sizeof buf, &n), "serialize")) return 1;
    if (check(sg_detector_process(det, buf, n, &out), "process")) return 1;
    printf("t=%lld case=%d flagged=%d auth_remaining=%u\n", (long long)out.timestamp_ms,
           (int)out.case_used, (int)out.flagged, out.auth_remaining);
  }
  sg_detector_free(det);
  sg_keys_free(keys);
  sg_graph_free(graph);
  return 0;
}
