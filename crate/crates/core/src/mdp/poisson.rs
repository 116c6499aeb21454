//! Truncated-Poisson kernels behind the pricing Bellman operator.

use crate::error::{invalid, Result};

/// Poisson probabilities `P(D = 0..=x)` plus the remaining mass `P(D > x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPrefix {
    pub pmf: Vec<f64>,
    pub tail: f64,
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(invalid(format!("demand rate must be finite and positive, got {lambda}")));
    }
    Ok(())
}

/// Computes `p_0..=p_x` for a Poisson(`lambda`) variable.
///
/// Probabilities come from the recurrence `p_d = p_{d-1} * lambda / d`, so no
/// factorial is ever formed; the tail is the clamped complement of the prefix.
pub fn poisson_pmf_prefix(lambda: f64, x: usize) -> Result<PoissonPrefix> {
    check_lambda(lambda)?;
    let mut pmf = Vec::with_capacity(x + 1);
    let mut p = (-lambda).exp();
    for d in 0..=x {
        if d > 0 {
            p *= lambda / d as f64;
        }
        pmf.push(p);
    }
    let tail = (1.0 - pmf.iter().sum::<f64>()).clamp(0.0, 1.0);
    Ok(PoissonPrefix { pmf, tail })
}

/// Expected units sold, `E[min(D, x)]`, for Poisson(`lambda`) demand and stock `x`.
pub fn expected_sales(lambda: f64, x: usize) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(sales_unchecked(lambda, x))
}

fn sales_unchecked(lambda: f64, x: usize) -> f64 {
    let mut p = (-lambda).exp();
    let mut cdf = 0.0;
    let mut partial = 0.0;
    for d in 0..x {
        partial += d as f64 * p;
        cdf += p;
        p *= lambda / (d + 1) as f64;
    }
    // sum_{d<x} d p_d + x P(D >= x)
    partial + x as f64 * (1.0 - cdf).clamp(0.0, 1.0)
}

/// One application of the pricing Bellman operator at demand rate `lambda`:
/// expected revenue `price * E[min(D, x)]` plus the expected continuation
/// value `sum_{d<x} v_next[x - d] * p_d`.
///
/// Inventory 0 is a boundary and always returns exactly 0. The continuation
/// sum omits `v_next[0]`, i.e. a stocked-out state is worth nothing.
pub fn bellman_q(x: usize, price: f64, lambda: f64, v_next: &[f64]) -> Result<f64> {
    check_lambda(lambda)?;
    if v_next.len() <= x {
        return Err(invalid(format!(
            "next-period value row has {} entries, need at least {}",
            v_next.len(),
            x + 1
        )));
    }
    Ok(q_value(x, price, lambda, v_next))
}

/// Unchecked [`bellman_q`]; callers guarantee `lambda > 0` and `v_next.len() > x`.
#[inline]
pub(crate) fn q_value(x: usize, price: f64, lambda: f64, v_next: &[f64]) -> f64 {
    if x == 0 {
        return 0.0;
    }
    let mut p = (-lambda).exp();
    let mut cdf = 0.0;
    let mut partial = 0.0;
    let mut future = 0.0;
    for d in 0..x {
        partial += d as f64 * p;
        future += v_next[x - d] * p;
        cdf += p;
        p *= lambda / (d + 1) as f64;
    }
    let sales = partial + x as f64 * (1.0 - cdf).clamp(0.0, 1.0);
    price * sales + future
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial_pmf(lambda: f64, d: u32) -> f64 {
        let fact: f64 = (1..=d).map(f64::from).product();
        (-lambda).exp() * lambda.powi(d as i32) / fact
    }

    #[test]
    fn zero_stock_prefix_is_single_term() {
        let p = poisson_pmf_prefix(3.7, 0).unwrap();
        assert_eq!(p.pmf, vec![(-3.7f64).exp()]);
        assert!((p.tail - (1.0 - (-3.7f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn prefix_matches_factorial_formula() {
        let p = poisson_pmf_prefix(2.5, 3).unwrap();
        let mut cdf = 0.0;
        for d in 0..=3 {
            let direct = factorial_pmf(2.5, d);
            assert!((p.pmf[d as usize] - direct).abs() < 1e-15);
            cdf += direct;
        }
        // P(D <= 3) for Poisson(2.5), written out.
        assert!((cdf - 0.757_576_133_133_066_6).abs() < 1e-12);
        assert!((p.tail - (1.0 - cdf)).abs() < 1e-14);
    }

    #[test]
    fn vanishing_demand() {
        let p = poisson_pmf_prefix(1e-12, 5).unwrap();
        assert!((p.pmf[0] - 1.0).abs() < 1e-11);
        assert!(p.tail < 1e-11);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(poisson_pmf_prefix(f64::NAN, 2).is_err());
        assert!(poisson_pmf_prefix(f64::INFINITY, 2).is_err());
        assert!(poisson_pmf_prefix(-1.0, 2).is_err());
        assert!(expected_sales(0.0, 2).is_err());
        assert!(bellman_q(1, 8.0, f64::NAN, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn expected_sales_edge_values() {
        assert_eq!(expected_sales(4.0, 0).unwrap(), 0.0);
        let one = expected_sales(2.5, 1).unwrap();
        assert!((one - (1.0 - (-2.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn expected_sales_matches_long_sum() {
        // Brute force: sum min(d, x) p_d out to d = 200 with factorial-free
        // log-space terms.
        let (lambda, x) = (6.0f64, 15usize);
        let mut oracle = 0.0;
        for d in 0..=200u32 {
            let log_p = -lambda + f64::from(d) * lambda.ln()
                - (1..=d).map(|k| f64::from(k).ln()).sum::<f64>();
            oracle += (d as usize).min(x) as f64 * log_p.exp();
        }
        let got = expected_sales(lambda, x).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn bellman_boundaries() {
        let v = vec![3.0; 20];
        assert_eq!(bellman_q(0, 9.0, 4.0, &v).unwrap(), 0.0);

        let zeros = vec![0.0; 16];
        let q = bellman_q(15, 8.0, 6.0, &zeros).unwrap();
        assert!((q - 8.0 * expected_sales(6.0, 15).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_unit_closed_form() {
        // With one unit left: a (1 - e^-l) + V(1) e^-l.
        for &(a, l, v1) in &[(10.0, 1.5, 20.0), (9.0, 2.0, 3.0), (8.0, 0.3, 0.0)] {
            let q = bellman_q(1, a, l, &[0.0, v1]).unwrap();
            let want = a - a * (-l).exp() + v1 * (-l).exp();
            assert!((q - want).abs() < 1e-13);
        }
    }

    #[test]
    fn short_value_row_is_rejected() {
        assert!(bellman_q(3, 8.0, 2.0, &[0.0, 1.0]).is_err());
    }
}
