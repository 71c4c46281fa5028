use crate::{ParamStore, Result, Tape, Var};

/// Compares tape gradients of a scalar function of `store` against central
/// differences with step `h`.
///
/// `f` must rebuild the computation from the store's current values on every
/// call and be deterministic. Returns the maximum over all coordinates of
/// `|g_tape - g_fd| / max(1, |g_fd|)`. On return the store holds the tape
/// gradients and its original values.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    store.zero_grad();
    let (tape, loss) = f(store)?;
    tape.backward(loss, store)?;
    drop(tape);

    let eval = |store: &ParamStore, f: &mut F| -> Result<f64> {
        let (tape, loss) = f(store)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let original = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = original + h;
            let plus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[k] = original - h;
            let minus = eval(store, &mut f)?;
            store.get_mut(id).value.data_mut()[k] = original;

            let fd = (plus - minus) / (2.0 * h);
            let ad = store.get(id).grad.data()[k];
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}
