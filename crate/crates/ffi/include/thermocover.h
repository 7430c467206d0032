#ifndef THERMOCOVER_H
#define THERMOCOVER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TcMode {
  TC_MODE_HEAT = 0,
  TC_MODE_COOL = 1,
} TcMode;

typedef enum TcStatus {
  TC_STATUS_OK = 0,
  TC_STATUS_NULL_POINTER = 1,
  TC_STATUS_INVALID_ARGUMENT = 2,
  // Bad configuration, scenario text or CSV.
  TC_STATUS_CONFIG = 3,
  // Numeric failure, solver non-convergence or ill-conditioned fit.
  TC_STATUS_NUMERIC = 4,
  TC_STATUS_IO = 5,
  TC_STATUS_OUT_OF_RANGE = 6,
  TC_STATUS_PANIC = 7,
} TcStatus;

typedef enum TcTarget {
  TC_TARGET_COVER = 0,
  TC_TARGET_PIPE = 1,
} TcTarget;

// Closed-loop controller: MPC, pump hysteresis and mode switch.
typedef struct TcController TcController;

// Contact heat-flow observer.
typedef struct TcObserver TcObserver;

// Lumped plant parameters.
typedef struct TcParams TcParams;

// Scenario description.
typedef struct TcScenario TcScenario;

// Simulated or loaded trace.
typedef struct TcTrace TcTrace;

typedef struct TcFopdt {
  double a;
  double b;
  size_t d;
} TcFopdt;

typedef struct TcControlOutput {
  double command;
  bool pump_on;
  enum TcMode mode;
  double cost;
  size_t iterations;
} TcControlOutput;

// One sample of a trace.
typedef struct TcTraceRow {
  double t;
  double t_p_cmd;
  double t_p;
  double t_co;
  double t_w;
  double t_c;
  bool pump_on;
  double q_w;
  double q_i_true;
  double q_i_hat;
  bool contact_flag;
} TcTraceRow;

typedef struct TcDetectionSummary {
  size_t detections;
  size_t true_positives;
  size_t false_positives;
  size_t misses;
  double peak_q_hat;
} TcDetectionSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *tc_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *tc_last_error(void);

void tc_string_free(char *s);

enum TcStatus tc_params_preset(enum TcMode mode, struct TcParams **out);

// Reads a parameter by key (`r_w`, `c_c`, `tau`, ...).
enum TcStatus tc_params_get(const struct TcParams *params, const char *key, double *value);

// Sets a parameter by key. The set is validated as a whole and left
// unchanged on failure.
enum TcStatus tc_params_set(struct TcParams *params, const char *key, double value);

void tc_params_free(struct TcParams *params);

// Discrete first-order-plus-dead-time model at sample time `t_s`.
enum TcStatus tc_fopdt_discretize(const struct TcParams *params, double t_s, struct TcFopdt *out);

enum TcStatus tc_observer_new(const struct TcParams *params,
                              double t_s,
                              double t_amb,
                              struct TcObserver **out);

// Puts the filter into steady state for a contact-free pipe at `t_w`
// receiving `net_input` watts.
enum TcStatus tc_observer_prime(struct TcObserver *obs, double t_w, double net_input);

// Advances one sample and writes the contact heat-flow estimate (W).
enum TcStatus tc_observer_step(struct TcObserver *obs,
                               double t_w,
                               double t_co,
                               bool pump_on,
                               double *q_hat);

enum TcStatus tc_observer_reset(struct TcObserver *obs);

void tc_observer_free(struct TcObserver *obs);

size_t tc_scenario_builtin_count(void);

// Name of built-in scenario `index`, a static string, or NULL when out
// of range.
const char *tc_scenario_builtin_name(size_t index);

enum TcStatus tc_scenario_builtin(const char *name, struct TcScenario **out);

// Parses a scenario in `key = value` form.
enum TcStatus tc_scenario_parse(const char *src, struct TcScenario **out);

// Applies a `key=value` override; the scenario is unchanged on failure.
enum TcStatus tc_scenario_set(struct TcScenario *scenario, const char *assignment);

enum TcStatus tc_scenario_to_string(const struct TcScenario *scenario, char **out);

enum TcStatus tc_scenario_target(const struct TcScenario *scenario, enum TcTarget *out);

void tc_scenario_free(struct TcScenario *scenario);

// Controller configured from a scenario's controller, loop, target,
// mode and ambient settings.
enum TcStatus tc_controller_new(const struct TcScenario *scenario, struct TcController **out);

// Seeds the controller as if `command` had long held the output at `output`.
enum TcStatus tc_controller_assume_steady(struct TcController *ctrl, double command, double output);

// Number of preview samples, after the current setpoint, that a step reads.
enum TcStatus tc_controller_horizon(const struct TcController *ctrl, size_t *out);

// One control period. `setpoints[0]` is the current setpoint and later
// entries preview the schedule; the last one is repeated as needed.
enum TcStatus tc_controller_step(struct TcController *ctrl,
                                 double measurement,
                                 double t_w,
                                 const double *setpoints,
                                 size_t n_setpoints,
                                 struct TcControlOutput *out);

void tc_controller_free(struct TcController *ctrl);

enum TcStatus tc_simulate(const struct TcScenario *scenario, struct TcTrace **out);

enum TcStatus tc_trace_from_csv(const char *csv, struct TcTrace **out);

// Number of rows; 0 for a NULL handle.
size_t tc_trace_len(const struct TcTrace *trace);

enum TcStatus tc_trace_row(const struct TcTrace *trace, size_t index, struct TcTraceRow *out);

enum TcStatus tc_trace_to_csv(const struct TcTrace *trace, char **out);

void tc_trace_free(struct TcTrace *trace);

// Thresholds the trace's estimate with the scenario's detection settings
// and scores it against the contact flags.
enum TcStatus tc_detect(const struct TcTrace *trace,
                        const struct TcScenario *scenario,
                        struct TcDetectionSummary *out);

// Plain-text run report, as written by the command-line tool.
enum TcStatus tc_run_report(const struct TcScenario *scenario,
                            const struct TcTrace *trace,
                            char **out);

// Fits the first-order step model to `column` (`T_c` or `T_w`) of an
// open-loop step trace and writes the result in `key = value` form.
enum TcStatus tc_fit_fopdt(const struct TcTrace *trace,
                           enum TcMode mode,
                           const char *column,
                           char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOCOVER_H */
