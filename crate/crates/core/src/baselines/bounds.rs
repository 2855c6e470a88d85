use std::fmt;

use crate::error::Result;
use crate::policy::{Algorithm, Cost, PolicyTable};
use crate::solver::solve_hsm;

/// Largest `a` for which the linear-cost bounds are checked.
const MAX_A: u32 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundViolation {
    pub t: usize,
    pub m: usize,
    pub cost: u64,
    pub bound: String,
}

impl fmt::Display for BoundViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "C({}, {}) = {} violates {}",
            self.t, self.m, self.cost, self.bound
        )
    }
}

/// `t <= m^a / a!`, exactly.
fn within_linear_regime(t: usize, m: usize, a: u32) -> bool {
    let fact: u128 = (1..=a as u128).product();
    match (m as u128).checked_pow(a) {
        Some(p) => (t as u128) * fact <= p,
        None => true,
    }
}

/// Checks every finite cell of `policy` against the analytic bounds for its
/// algorithm. HSM tables get the power-law and linear bounds; ISM tables the
/// linear bound and dominance over HSM; mixed tables dominance over HSM at
/// equal budgets.
pub fn check_bounds(policy: &PolicyTable) -> Result<Vec<BoundViolation>> {
    let mut out = Vec::new();
    let (t_max, m_max) = (policy.t_max(), policy.m_max());
    let hsm = match policy.algorithm() {
        Algorithm::Hsm => None,
        _ => Some(solve_hsm(t_max, m_max)?),
    };
    let mut violate = |t: usize, m: usize, cost: u64, bound: String| {
        out.push(BoundViolation { t, m, cost, bound });
    };
    for t in 1..=t_max {
        for m in 1..=m_max {
            let Some(c) = policy.cost(t, m).value() else {
                continue;
            };
            match policy.algorithm() {
                Algorithm::Hsm => {
                    let tf = t as f64;
                    let exp = 1.0 + 1.0 / m as f64;
                    let power = tf.powf(exp);
                    if c as f64 > m as f64 * power {
                        violate(t, m, c, format!("m*t^(1+1/m) = {}", m as f64 * power));
                    }
                    if c as f64 >= 4.0 * power {
                        violate(t, m, c, format!("4*t^(1+1/m) = {}", 4.0 * power));
                    }
                    for a in 1..=MAX_A {
                        if within_linear_regime(t, m, a) && c > (a as u64 + 1) * t as u64 {
                            violate(t, m, c, format!("(a+1)t with a = {a}"));
                        }
                    }
                }
                Algorithm::Ism => {
                    for a in 1..=MAX_A {
                        if within_linear_regime(t, m, a) && c > a as u64 * t as u64 {
                            violate(t, m, c, format!("a*t with a = {a}"));
                        }
                    }
                }
                Algorithm::Msm | Algorithm::MsmDedup => {}
            }
            if let Some(h) = &hsm {
                let hc = h.cost(t, m);
                if Cost::finite(c) > hc {
                    violate(t, m, c, format!("HSM cost {hc} at the same budget"));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve_ism;

    #[test]
    fn regime_condition() {
        assert!(within_linear_regime(8, 4, 2));
        assert!(!within_linear_regime(9, 4, 2));
        assert!(within_linear_regime(1000, 50, 2));
        assert!(within_linear_regime(1250, 50, 2));
        assert!(!within_linear_regime(1251, 50, 2));
    }

    #[test]
    fn small_tables_satisfy_bounds() {
        let h = solve_hsm(300, 16).unwrap();
        assert!(check_bounds(&h).unwrap().is_empty());
        assert!(h.cost(16, 2).get() as f64 <= 128.0);
        assert!(h.cost(8, 4).get() <= 24);
        let i = solve_ism(300, 16).unwrap();
        assert!(check_bounds(&i).unwrap().is_empty());
    }
}
