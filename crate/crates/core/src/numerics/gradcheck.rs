//! Central-difference verification of tape gradients.

use super::param::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares analytic gradients of `f` against central differences for every
/// scalar of every trainable parameter in `store`.
///
/// Returns `max |analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Numeric(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective {v}")));
        }
        Ok(v)
    };

    store.zero_grad();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        if !tape.scalar(out).is_finite() {
            return Err(Error::Numeric("non-finite objective".into()));
        }
        tape.backward(out, store)?;
    }

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = store.get(id).grad.data()[i];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::NdArray;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", NdArray::scalar(3.0));
        let err = grad_check(&mut store, 1e-4, |t, s| {
            let v = t.param(s, x);
            Ok(t.square(v))
        })
        .unwrap();
        assert!(err < 1e-8);
        assert!((store.get(x).grad.data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", NdArray::full(&[4], 0.3));
        let err = grad_check(&mut store, 1e-4, |t, s| {
            let v = t.param(s, x);
            let z = t.scale(v, 0.0);
            let z = t.sum(z);
            Ok(t.affine(z, 1.0, 2.5))
        })
        .unwrap();
        assert_eq!(err, 0.0);
        assert!(store.get(x).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", NdArray::scalar(-1.0));
        let r = grad_check(&mut store, 1e-4, |t, s| {
            let v = t.param(s, x);
            let r = t.sqrt(v);
            Ok(t.sum(r))
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn eps_range_enforced() {
        let mut store = ParamStore::new();
        store.add("x", NdArray::scalar(1.0));
        assert!(grad_check(&mut store, 0.1, |t, _| Ok(t.constant(NdArray::scalar(0.0)))).is_err());
    }
}
