use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Graph, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all checked entries of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(tensor index, flat entry)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub entries: usize,
    pub loss: f64,
}

const REL_FLOOR: f64 = 1e-8;

/// Compare the analytic gradient of `f` against central differences with step `eps`.
///
/// `f` receives a fresh graph and one leaf per tensor in `params`, in order, and
/// must return a single-element loss node.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |ps: &[Tensor<T>], track: bool| -> Result<(Graph<T>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p, track)).collect();
        let loss = f(&mut g, &vars)?;
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFiniteLoss { step: None });
        }
        Ok((g, vars, loss))
    };

    let (g, vars, loss) = eval(params, true)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p.len())).collect();

    let h = T::lit(eps);
    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries: 0, loss: g.scalar(loss).to_f64_lossy() };
    for (t, grads_t) in analytic.iter().enumerate() {
        for (e, &a_e) in grads_t.iter().enumerate() {
            let x = params[t].values()[e];
            let (xp, xm) = (x + h, x - h);
            work[t].values_mut()[e] = xp;
            let (gp, _, lp) = eval(&work, false)?;
            work[t].values_mut()[e] = xm;
            let (gm, _, lm) = eval(&work, false)?;
            work[t].values_mut()[e] = x;
            let numeric = ((gp.scalar(lp) - gm.scalar(lm)) / (xp - xm)).to_f64_lossy();
            let a = a_e.to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((t, e));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.7, -0.1, 1.5]).unwrap();
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries, 6);
    }

    #[test]
    fn softmax_cross_entropy_matches_hand_gradient() {
        // -log softmax(z)[2] = lse(z) - z[2]; gradient is p - onehot(2).
        let z = Tensor::row(vec![1.0f64, 2.0, 3.0]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let lse = g.log_sum_exp_rows(v[0])?;
            let pick = g.slice_cols(v[0], 2, 1)?;
            g.sub(lse, pick)
        };
        let r = grad_check(f, std::slice::from_ref(&z), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");

        let mut g = Graph::new();
        let v = g.leaf(&z, true);
        let loss = f(&mut g, &[v]).unwrap();
        let grads = g.backward(loss).unwrap();
        let s: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
        let expected = [1f64.exp() / s, 2f64.exp() / s, 3f64.exp() / s - 1.0];
        for (a, b) in grads.get(v).unwrap().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_step_out_of_range() {
        let x = Tensor::row(vec![1.0f64]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| g.sum(v[0]);
        assert!(grad_check(f, std::slice::from_ref(&x), 1e-2).is_err());
        assert!(grad_check(f, std::slice::from_ref(&x), 1e-9).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = Tensor::row(vec![800.0f64]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let e = g.exp(v[0])?;
            g.sum(e)
        };
        assert!(matches!(
            grad_check(f, &[x], 1e-5),
            Err(Error::NonFinite { .. }) | Err(Error::NonFiniteLoss { .. })
        ));
    }
}
