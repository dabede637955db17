#ifndef PARISIAN_H
#define PARISIAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum ParisianStatus {
  Ok = 0,
  NullPointer = 1,
  InvalidArgument = 2,
  NumericalError = 3,
  NotConverged = 4,
  InternalError = 5,
} ParisianStatus;

/**
 * Opaque handle: a converged grid solution of the control problem.
 */
typedef struct ParisianHjbSolution ParisianHjbSolution;

/**
 * Opaque handle: validated market parameters plus a claim-size model.
 */
typedef struct ParisianModel ParisianModel;

/**
 * Market and preference parameters, mirrored as a plain C struct.
 */
typedef struct ParisianMarket {
  /**
   * Claim arrival intensity.
   */
  double lambda;
  /**
   * Premium income rate.
   */
  double c;
  /**
   * Mean loading of the reinsurance premium principle.
   */
  double theta;
  /**
   * Variance loading of the reinsurance premium principle.
   */
  double eta;
  /**
   * Parisian clock rate.
   */
  double rho;
  /**
   * Discount rate.
   */
  double beta;
} ParisianMarket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a model with exponential(rate) claim sizes.
 *
 * # Safety
 * `out` must be a valid pointer to a `ParisianModel*` slot.
 */
enum ParisianStatus parisian_model_new_exponential(struct ParisianMarket market,
                                                   double rate,
                                                   struct ParisianModel **out);

/**
 * Create a model with gamma(shape, rate) claim sizes.
 *
 * # Safety
 * `out` must be a valid pointer to a `ParisianModel*` slot.
 */
enum ParisianStatus parisian_model_new_gamma(struct ParisianMarket market,
                                             double shape,
                                             double rate,
                                             struct ParisianModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be a pointer previously returned by a `parisian_model_new_*`
 * function and not yet freed.
 */
void parisian_model_free(struct ParisianModel *model);

/**
 * Full-retention drift constant kappa = lambda E[Y] - c.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum ParisianStatus parisian_kappa(const struct ParisianModel *model, double *out);

/**
 * Diffusion-approximation exponents (gamma1_tilde, gamma2_tilde).
 *
 * # Safety
 * `model`, `gamma1`, and `gamma2` must be valid pointers.
 */
enum ParisianStatus parisian_diffusion_gammas(const struct ParisianModel *model,
                                              double *gamma1,
                                              double *gamma2);

/**
 * Adjustment coefficients (gamma1, gamma2) of the jump model.
 *
 * # Safety
 * `model`, `gamma1`, and `gamma2` must be valid pointers.
 */
enum ParisianStatus parisian_adjustment_gammas(const struct ParisianModel *model,
                                               double *gamma1,
                                               double *gamma2);

/**
 * Analytic upper and lower bounds at a surplus level.
 *
 * # Safety
 * `model`, `upper`, and `lower` must be valid pointers.
 */
enum ParisianStatus parisian_bounds_at(const struct ParisianModel *model,
                                       double x,
                                       double *upper,
                                       double *lower);

/**
 * Solve the control problem on [x_min, x_max] with n_x nodes and n_atoms
 * severity atoms, using default solver settings. Pass n_x = 0 and
 * n_atoms = 0 for the built-in defaults.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum ParisianStatus parisian_hjb_solve(const struct ParisianModel *model,
                                       double x_min,
                                       double x_max,
                                       uintptr_t n_x,
                                       uintptr_t n_atoms,
                                       struct ParisianHjbSolution **out);

/**
 * Release a solution handle. Null is a no-op.
 *
 * # Safety
 * `sol` must be a pointer previously returned by `parisian_hjb_solve` and
 * not yet freed.
 */
void parisian_hjb_free(struct ParisianHjbSolution *sol);

/**
 * Minimal discounted Parisian ruin probability at surplus x (linear
 * interpolation between grid nodes, analytic extension outside).
 *
 * # Safety
 * `sol` and `out` must be valid pointers.
 */
enum ParisianStatus parisian_hjb_value_at(const struct ParisianHjbSolution *sol,
                                          double x,
                                          double *out);

/**
 * Largest interior residual of the converged solution.
 *
 * # Safety
 * `sol` and `out` must be valid pointers.
 */
enum ParisianStatus parisian_hjb_max_residual(const struct ParisianHjbSolution *sol, double *out);

/**
 * Static description of a status code. Never null; do not free.
 */
const char *parisian_status_message(enum ParisianStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARISIAN_H */
