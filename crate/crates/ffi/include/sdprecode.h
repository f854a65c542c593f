#ifndef SDPRECODE_H
#define SDPRECODE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdpStatus {
  SDP_STATUS_OK = 0,
  SDP_STATUS_NULL_POINTER = 1,
  SDP_STATUS_INVALID_ARGUMENT = 2,
  SDP_STATUS_LENGTH_MISMATCH = 3,
  SDP_STATUS_ZERO_COEFFICIENT = 4,
  SDP_STATUS_NOT_CANONICAL = 5,
  SDP_STATUS_RANK_DEFICIENT = 6,
  SDP_STATUS_ZERO_NORMALIZATION = 7,
  SDP_STATUS_CONFIG = 8,
  SDP_STATUS_IO = 9,
  SDP_STATUS_UNCONVERGED = 10,
  SDP_STATUS_PANIC = 11,
} SdpStatus;

typedef enum SdpConstellation {
  SDP_CONSTELLATION_PSK = 0,
  SDP_CONSTELLATION_QAM = 1,
} SdpConstellation;

typedef enum SdpSlpSolver {
  SDP_SLP_SOLVER_PRIMAL = 0,
  SDP_SLP_SOLVER_DUAL = 1,
} SdpSlpSolver;

/**
 * Opaque multi-user scene.
 */
typedef struct SdpScene SdpScene;

/**
 * Opaque simulated error-rate curve.
 */
typedef struct SdpSerCurve SdpSerCurve;

typedef struct SdpComplex {
  double re;
  double im;
} SdpComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *sdp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdp_version(void);

/**
 * Basic spatial sigma-delta modulator. `out` receives `n` one-bit samples.
 *
 * # Safety
 * `xbar` and `out` must point to `n` elements; `overloaded` may be NULL.
 */
enum SdpStatus sdp_sd_basic(const struct SdpComplex *xbar,
                            size_t n,
                            struct SdpComplex *out,
                            bool *overloaded);

/**
 * Basic modulator with uniform dither of half-width `level`, seeded by `seed`.
 *
 * # Safety
 * Same as [`sdp_sd_basic`].
 */
enum SdpStatus sdp_sd_dithered(const struct SdpComplex *xbar,
                               size_t n,
                               double level,
                               uint64_t seed,
                               struct SdpComplex *out,
                               bool *overloaded);

/**
 * Angle-steered modulator with feedback rotation `phi` (radians).
 *
 * # Safety
 * Same as [`sdp_sd_basic`].
 */
enum SdpStatus sdp_sd_steered(const struct SdpComplex *xbar,
                              size_t n,
                              double phi,
                              struct SdpComplex *out,
                              bool *overloaded);

/**
 * Generalized modulator for a canonical channel `h` (nonzero entries sorted
 * by nondecreasing magnitude).
 *
 * # Safety
 * `xbar`, `h` and `out` must point to `n` elements; `overloaded` may be NULL.
 */
enum SdpStatus sdp_sd_generalized(const struct SdpComplex *xbar,
                                  const struct SdpComplex *h,
                                  size_t n,
                                  struct SdpComplex *out,
                                  bool *overloaded);

/**
 * No-overload input amplitude of the angle-steered modulator.
 */
double sdp_no_overload_amplitude(double phi);

/**
 * Symbol error probability bound for an effective SNR (linear).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SdpStatus sdp_sep_bound(double snr_eff, enum SdpConstellation kind, size_t order, double *out);

/**
 * Scene of `k` single-path users on an `n_antennas` ULA with spacing
 * `spacing` (in wavelengths). `angles` are in radians.
 *
 * # Safety
 * `gains` and `angles` must point to `k` elements; `scene` must be valid.
 */
enum SdpStatus sdp_scene_new(size_t n_antennas,
                             double spacing,
                             size_t k,
                             const struct SdpComplex *gains,
                             const double *angles,
                             double total_power,
                             double noise_variance,
                             struct SdpScene **scene);

/**
 * Scene with arbitrary channel rows: `h` is `k × n_antennas`, row-major.
 *
 * # Safety
 * `h` must point to `k * n_antennas` elements; `scene` must be valid.
 */
enum SdpStatus sdp_scene_new_arbitrary(size_t n_antennas,
                                       double spacing,
                                       size_t k,
                                       const struct SdpComplex *h,
                                       double total_power,
                                       double noise_variance,
                                       struct SdpScene **scene);

/**
 * # Safety
 * `scene` must come from `sdp_scene_new*` and not be used afterwards.
 */
void sdp_scene_free(struct SdpScene *scene);

/**
 * # Safety
 * `scene` must be NULL or a live handle.
 */
size_t sdp_scene_users(const struct SdpScene *scene);

/**
 * # Safety
 * `scene` must be NULL or a live handle.
 */
size_t sdp_scene_antennas(const struct SdpScene *scene);

/**
 * Zero-forcing precoder input for symbols `s` (length = users). Writes the
 * `n_antennas` unquantized entries to `xbar` and the normalization to `gamma`.
 *
 * # Safety
 * `s` must hold `k` elements, `xbar` `n` elements; `gamma` may be NULL.
 */
enum SdpStatus sdp_zf_precode(const struct SdpScene *scene,
                              const struct SdpComplex *s,
                              size_t k,
                              struct SdpComplex *xbar,
                              size_t n,
                              double *gamma);

/**
 * Symbol-level precoding for `m`-PSK with default solver settings.
 * Returns `SDP_STATUS_UNCONVERGED` (with outputs written) when the solver
 * hits its iteration cap.
 *
 * # Safety
 * `s` must hold `k` elements, `xbar` `n` elements; `objective` may be NULL.
 */
enum SdpStatus sdp_slp_precode(const struct SdpScene *scene,
                               const struct SdpComplex *s,
                               size_t k,
                               size_t m,
                               enum SdpSlpSolver solver,
                               struct SdpComplex *xbar,
                               size_t n,
                               double *objective);

/**
 * Run an error-rate simulation described by a TOML document. A run whose
 * solver hit its iteration cap still yields a curve and returns
 * `SDP_STATUS_UNCONVERGED`.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated UTF-8 string; `curve` must be valid.
 */
enum SdpStatus sdp_ser_run(const char *config_toml, struct SdpSerCurve **curve);

/**
 * # Safety
 * `curve` must be NULL or a live handle.
 */
size_t sdp_ser_len(const struct SdpSerCurve *curve);

/**
 * Point `i` of the curve. `theory_ser` is NaN when no closed form applies.
 *
 * # Safety
 * `curve` must be a live handle; output pointers may be NULL.
 */
enum SdpStatus sdp_ser_point(const struct SdpSerCurve *curve,
                             size_t i,
                             double *snr_db,
                             double *ser,
                             double *ber,
                             double *theory_ser);

/**
 * # Safety
 * `curve` must come from [`sdp_ser_run`] and not be used afterwards.
 */
void sdp_ser_free(struct SdpSerCurve *curve);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDPRECODE_H */
