use crate::autodiff::store::ParamStore;
use crate::error::Result;
use crate::tensor::Scalar;

/// Classical SGD-with-momentum settings.
#[derive(Debug, Copy, Clone)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

/// One update over every parameter in the store:
/// `v <- momentum * v + g; w <- w - lr * v`, then gradients are zeroed.
pub fn sgd_step<E: Scalar>(store: &mut ParamStore<E>, cfg: SgdConfig) -> Result<()> {
    let mu = E::from_f64(cfg.momentum);
    let lr = E::from_f64(cfg.lr);
    for id in store.ids().collect::<Vec<_>>() {
        let p = store.param_mut(id);
        for (v, &g) in p.velocity.data_mut().iter_mut().zip(p.grad.data()) {
            *v = *v * mu + g;
        }
        let velocity = p.velocity.clone();
        p.value.add_scaled(&velocity, -lr)?;
        p.grad.fill(E::ZERO);
    }
    Ok(())
}
