#ifndef SPOOFGUARD_H
#define SPOOFGUARD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bytes in a serialized packet without a tag.
 */
#define SG_UNSIGNED_LEN 41

/**
 * Bytes in a serialized packet with its HMAC-SHA-512 tag.
 */
#define SG_SIGNED_LEN 105

#define SG_KEY_LEN 32

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_UTF8 = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_PARSE = 4,
  SG_STATUS_VALIDATION = 5,
  SG_STATUS_UNKNOWN_VEHICLE = 6,
  SG_STATUS_MALFORMED = 7,
  SG_STATUS_BUFFER_TOO_SMALL = 8,
  SG_STATUS_KEY_MISMATCH = 9,
  SG_STATUS_PANIC = 10,
} SgStatus;

typedef enum SgCase {
  /**
   * First packet of a vehicle; it only seeds the state.
   */
  SG_CASE_SEED = 0,
  /**
   * Rejected before the position check (authentication or replay).
   */
  SG_CASE_UNCHECKED = 1,
  SG_CASE_SAME_ROAD = 2,
  SG_CASE_ADJACENT_ROADS = 3,
  SG_CASE_FROM_JUNCTION = 4,
  SG_CASE_TO_JUNCTION = 5,
  SG_CASE_INVALID = 6,
} SgCase;

typedef enum SgReason {
  SG_REASON_NONE = 0,
  SG_REASON_E_EXCEEDS = 1,
  SG_REASON_INVALID_LOCATION = 2,
  SG_REASON_REPLAY = 3,
  SG_REASON_AUTH_FAILURE = 4,
} SgReason;

typedef struct SgDetector SgDetector;

typedef struct SgGraph SgGraph;

typedef struct SgKeyTable SgKeyTable;

typedef struct SgGraphCounts {
  size_t junctions;
  size_t roads;
  size_t sampled_points;
  size_t road_pairs;
} SgGraphCounts;

typedef struct SgPacket {
  uint64_t vehicle_id;
  double lat;
  double lon;
  double bearing;
  int64_t timestamp_ms;
} SgPacket;

/**
 * Result of processing one packet. Distances are NaN when not computed.
 */
typedef struct SgOutcome {
  uint64_t vehicle_id;
  int64_t timestamp_ms;
  enum SgCase case_used;
  double d;
  double max_dist;
  double e_value;
  bool flagged;
  enum SgReason reason;
  uint32_t auth_remaining;
  /**
   * True when the vehicle was just told to start signing.
   */
  bool alert;
} SgOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *sg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/**
 * Loads and preprocesses a roadmap file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_graph_load(const char *path, struct SgGraph **out);

/**
 * Preprocesses a roadmap given as JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_graph_from_json(const char *json, struct SgGraph **out);

/**
 * # Safety
 * `graph` must be valid; `out` must be writable.
 */
enum SgStatus sg_graph_counts(const struct SgGraph *graph, struct SgGraphCounts *out);

/**
 * # Safety
 * `graph` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void sg_graph_free(struct SgGraph *graph);

/**
 * Creates an empty key table.
 */
struct SgKeyTable *sg_keys_new(void);

/**
 * Generates one key per vehicle id from a seeded stream.
 *
 * # Safety
 * `ids` must point to `n` ids (may be null when `n` is 0); `out` must be
 * writable.
 */
enum SgStatus sg_keys_generate(const uint64_t *ids,
                               size_t n,
                               uint64_t seed,
                               struct SgKeyTable **out);

/**
 * Adds or replaces a vehicle key of [`SG_KEY_LEN`] bytes.
 *
 * # Safety
 * `keys` must be valid; `key` must point to `SG_KEY_LEN` bytes.
 */
enum SgStatus sg_keys_insert(struct SgKeyTable *keys, uint64_t vehicle_id, const uint8_t *key);

/**
 * # Safety
 * `keys` must come from this library and not be used afterwards. Null is
 * ignored.
 */
void sg_keys_free(struct SgKeyTable *keys);

/**
 * Serializes an unsigned packet into `buf`. `*written` receives the
 * required size even when the buffer is too small.
 *
 * # Safety
 * `packet` must be valid; `buf` must hold `cap` bytes; `written` must be
 * writable.
 */
enum SgStatus sg_packet_serialize(const struct SgPacket *packet,
                                  uint8_t *buf,
                                  size_t cap,
                                  size_t *written);

/**
 * Signs a packet with its vehicle's key from `keys` and serializes it.
 *
 * # Safety
 * As for [`sg_packet_serialize`]; `keys` must be valid.
 */
enum SgStatus sg_packet_sign(const struct SgKeyTable *keys,
                             const struct SgPacket *packet,
                             uint8_t *buf,
                             size_t cap,
                             size_t *written);

/**
 * Creates a detector over `graph` for the vehicles in `keys`. Both inputs
 * are copied or shared; the caller may free them afterwards.
 *
 * # Safety
 * `graph` and `keys` must be valid; `out` must be writable.
 */
enum SgStatus sg_detector_new(const struct SgGraph *graph,
                              const struct SgKeyTable *keys,
                              uint32_t t_auth,
                              struct SgDetector **out);

/**
 * Checks one serialized packet and updates the vehicle's state.
 *
 * # Safety
 * `detector` must be valid; `bytes` must hold `len` bytes; `out` must be
 * writable.
 */
enum SgStatus sg_detector_process(const struct SgDetector *detector,
                                  const uint8_t *bytes,
                                  size_t len,
                                  struct SgOutcome *out);

/**
 * Authenticated packets the vehicle still owes; 0 for unknown vehicles or a
 * null detector.
 *
 * # Safety
 * `detector` must be valid or null.
 */
uint32_t sg_detector_auth_remaining(const struct SgDetector *detector, uint64_t vehicle_id);

/**
 * # Safety
 * `detector` must come from this library and not be used afterwards. Null
 * is ignored.
 */
void sg_detector_free(struct SgDetector *detector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPOOFGUARD_H */
