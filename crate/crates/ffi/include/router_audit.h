#ifndef ROUTER_AUDIT_H
#define ROUTER_AUDIT_H

#include <stddef.h>
#include <stdint.h>

// Result codes shared by every entry point.
typedef enum RaStatus {
  RA_STATUS_OK = 0,
  // A required pointer argument was null.
  RA_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  RA_STATUS_INVALID_UTF8 = 2,
  // Malformed JSON, URL, mode or payload spec.
  RA_STATUS_INVALID_INPUT = 3,
  // The target did not answer or could not be identified.
  RA_STATUS_UNREACHABLE = 4,
  // A mock fleet failed to start or an id was unknown.
  RA_STATUS_FLEET_ERROR = 5,
  // A panic or runtime failure inside the library.
  RA_STATUS_INTERNAL = 6,
} RaStatus;

// A loaded signature database.
typedef struct RaDatabase RaDatabase;

// A running emulated router fleet.
typedef struct RaFleet RaFleet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string. Do not free.
const char *ra_version(void);

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library on the same thread. Do not free.
const char *ra_last_error(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and must not be freed twice.
void ra_string_free(char *s);

// Loads the signature database shipped with the library.
//
// # Safety
// `out` must be a valid pointer.
enum RaStatus ra_db_bundled(struct RaDatabase **out);

// Loads a signature database from `signatures.json` text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_db_load_json(const char *json, struct RaDatabase **out);

// # Safety
// `db` must come from `ra_db_*` and must not be used afterwards.
void ra_db_free(struct RaDatabase *db);

// Table statistics of the database as a JSON object.
//
// # Safety
// `db` must be a live handle and `out` a valid pointer.
enum RaStatus ra_db_stats_json(const struct RaDatabase *db, char **out);

// Fingerprints one target and writes the decision as JSON. Returns
// `Unreachable` when the device was not identified; `out` is still set.
// `timeout_ms` of 0 selects the default timeout.
//
// # Safety
// `db` must be a live handle, `url` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fingerprint_json(const struct RaDatabase *db,
                                  const char *url,
                                  uint32_t timeout_ms,
                                  char **out);

// Scans `count` target URLs and writes the JSON report. `mode` is one of
// passive, active or lab.
//
// # Safety
// `urls` must point to `count` NUL-terminated strings; `db`, `mode` and
// `out` must be valid.
enum RaStatus ra_scan_json(const struct RaDatabase *db,
                           const char *const *urls,
                           uintptr_t count,
                           const char *mode,
                           uint32_t timeout_ms,
                           char **out);

// Generates proof-of-concept pages. `kind` is csrf, redress or tabjack;
// the result is a JSON object mapping file name to HTML.
//
// # Safety
// `kind` and `spec_json` must be NUL-terminated strings and `out` a valid pointer.
enum RaStatus ra_gen_payload_json(const char *kind, const char *spec_json, char **out);

// Starts the shipped ten-device fleet on loopback.
//
// # Safety
// `out` must be a valid pointer.
enum RaStatus ra_fleet_start_bundled(struct RaFleet **out);

// Starts a fleet from `fleet.json` text, resolving signature ids in `db`.
//
// # Safety
// `db` must be a live handle, `config` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fleet_start_json(const struct RaDatabase *db,
                                  const char *config,
                                  struct RaFleet **out);

// Number of devices in the fleet, or 0 for a null handle.
//
// # Safety
// `fleet` must be null or a live handle.
uintptr_t ra_fleet_len(const struct RaFleet *fleet);

// JSON object mapping device id to base URL.
//
// # Safety
// `fleet` must be a live handle and `out` a valid pointer.
enum RaStatus ra_fleet_urls_json(const struct RaFleet *fleet, char **out);

// Base URL of one device.
//
// # Safety
// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fleet_url(const struct RaFleet *fleet, const char *id, char **out);

// State snapshot of one device as JSON.
//
// # Safety
// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fleet_state_json(const struct RaFleet *fleet, const char *id, char **out);

// Reboot counter of one device.
//
// # Safety
// `fleet` must be a live handle, `id` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fleet_reboot_count(const struct RaFleet *fleet, const char *id, uint64_t *out);

// Scans every device of a running fleet and writes the JSON report.
//
// # Safety
// `db` and `fleet` must be live handles, `mode` a NUL-terminated string and `out` a valid pointer.
enum RaStatus ra_fleet_scan_json(const struct RaDatabase *db,
                                 const struct RaFleet *fleet,
                                 const char *mode,
                                 uint32_t timeout_ms,
                                 char **out);

// Closes every listener. Safe to call more than once.
//
// # Safety
// `fleet` must be a live handle.
enum RaStatus ra_fleet_stop(struct RaFleet *fleet);

// Stops the fleet if needed and releases the handle.
//
// # Safety
// `fleet` must come from `ra_fleet_start_*` and must not be used afterwards.
void ra_fleet_free(struct RaFleet *fleet);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUTER_AUDIT_H */
