use super::Network;

/// SGD with momentum on trainable layers: `v = momentum * v + grad`,
/// `param -= lr * v`. Frozen layers are left bitwise untouched.
pub fn sgd_step(net: &mut Network, lr: f64, momentum: f64) {
    for layer in net.layers_mut().iter_mut().filter(|l| l.trainable) {
        for ((p, g), v) in layer
            .params
            .iter_mut()
            .zip(&layer.grads)
            .zip(layer.momentum.iter_mut())
        {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = momentum * *vv + gv;
                *pv -= lr * *vv;
            }
        }
    }
}
