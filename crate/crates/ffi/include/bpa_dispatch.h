/* SPDX-License-Identifier: Apache-2.0 */

#ifndef BPA_DISPATCH_H
#define BPA_DISPATCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which listener address to report.
 */
typedef enum BpaListener {
  BPA_LISTENER_DISPATCH = 0,
  BPA_LISTENER_APP = 1,
  BPA_LISTENER_CLA = 2,
} BpaListener;

/**
 * Result of every call.
 */
typedef enum BpaStatus {
  BPA_STATUS_OK = 0,
  BPA_STATUS_NULL_ARGUMENT = 1,
  BPA_STATUS_INVALID_ARGUMENT = 2,
  BPA_STATUS_PORT_IN_USE = 3,
  BPA_STATUS_CONNECT_REFUSED = 4,
  BPA_STATUS_RPC_ERROR = 5,
  BPA_STATUS_TIMEOUT = 6,
  BPA_STATUS_CLOSED = 7,
  BPA_STATUS_PROTOCOL_ERROR = 8,
  BPA_STATUS_UNREACHABLE = 9,
  BPA_STATUS_INTERNAL = 10,
} BpaStatus;

/**
 * A connection to a dispatch listener.
 */
typedef struct BpaClient BpaClient;

/**
 * A running node.
 */
typedef struct BpaNode BpaNode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bpa_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on this thread.
 */
const char *bpa_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void bpa_string_free(char *s);

/**
 * Starts a node from TOML configuration text.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum BpaStatus bpa_node_start(const char *config_toml, struct BpaNode **out);

/**
 * Writes the bound `host:port` of one listener to `out`.
 *
 * # Safety
 * `node` must be a live handle; `out` must be writable.
 */
enum BpaStatus bpa_node_address(const struct BpaNode *node, enum BpaListener which, char **out);

/**
 * Dials a peer's CLA listener and writes the peer's node name to `peer_out`.
 *
 * # Safety
 * `node` must be a live handle; `address` a NUL-terminated string;
 * `peer_out` writable.
 */
enum BpaStatus bpa_node_dial(const struct BpaNode *node, const char *address, char **peer_out);

/**
 * Stops the node and releases the handle. Null is ignored.
 *
 * # Safety
 * `node` must come from [`bpa_node_start`] and not be used afterwards.
 */
void bpa_node_free(struct BpaNode *node);

/**
 * Connects to a dispatch listener. `role` is one of `bdm`, `monitor`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum BpaStatus bpa_client_connect(const char *address,
                                  const char *role,
                                  const char *name,
                                  struct BpaClient **out);

/**
 * Subscribes to a comma-separated list of topics.
 *
 * # Safety
 * `client` must be live; `topics` NUL-terminated.
 */
enum BpaStatus bpa_client_subscribe(const struct BpaClient *client, const char *topics);

/**
 * Issues an RPC with JSON params and writes the JSON result to `result_out`.
 * On [`BpaStatus::RpcError`] the message carries the server's error code.
 *
 * # Safety
 * `client` must be live; strings NUL-terminated; `result_out` writable.
 */
enum BpaStatus bpa_client_call(const struct BpaClient *client,
                               const char *method,
                               const char *params_json,
                               char **result_out);

/**
 * Waits up to `timeout_ms` (negative: forever) for the next event and writes
 * it as JSON to `event_out`.
 *
 * # Safety
 * `client` must be live; `event_out` writable.
 */
enum BpaStatus bpa_client_next_event(const struct BpaClient *client,
                                     int64_t timeout_ms,
                                     char **event_out);

/**
 * Closes the connection and releases the handle. Null is ignored.
 *
 * # Safety
 * `client` must come from [`bpa_client_connect`] and not be used afterwards.
 */
void bpa_client_free(struct BpaClient *client);

/**
 * Computes the earliest-arrival route over a plan given as text
 * (`from to start end [owlt]` lines). Writes
 * `{"next-hop","arrival","departure","hops"}` JSON to `route_out`, or
 * returns [`BpaStatus::Unreachable`].
 *
 * # Safety
 * Strings must be NUL-terminated; `route_out` writable.
 */
enum BpaStatus bpa_earliest_arrival(const char *plan,
                                    const char *source,
                                    const char *dest,
                                    uint64_t t0,
                                    char **route_out);

/**
 * Validates a JSON action list against the core verbs.
 *
 * # Safety
 * `actions_json` must be NUL-terminated.
 */
enum BpaStatus bpa_validate_action_list(const char *actions_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BPA_DISPATCH_H */
