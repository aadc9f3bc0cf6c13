//! Central finite-difference check of one LSTM cell's weight gradient.
//!
//! ```text
//! cargo run --release --example lstm_gradcheck
//! ```

use ndarray::{Array1, Array2};
use slimlm::lstm::{lstm_cell_backward, lstm_cell_forward, LstmLayerParams};
use slimlm::rng::SplitMix64;

fn loss(params: &LstmLayerParams, x: &Array2<f64>, h0: &Array2<f64>, c0: &Array2<f64>, probe: &Array2<f64>) -> f64 {
    let (h, c, _) = lstm_cell_forward(params, x.view(), h0.view(), c0.view(), None).unwrap();
    (&h * probe).sum() + 0.5 * (&c * probe).sum()
}

fn main() -> slimlm::Result<()> {
    let (n, batch) = (6, 3);
    let mut rng = SplitMix64::new(9);
    let mut random = |r, c| Array2::from_shape_simple_fn((r, c), || rng.symmetric(0.8));
    let mut params = LstmLayerParams {
        weight: random(2 * n, 4 * n),
        bias: Array1::zeros(4 * n),
    };
    let (x, h0, c0, probe) = (random(batch, n), random(batch, n), random(batch, n), random(batch, n));

    let (_, _, cache) = lstm_cell_forward(&params, x.view(), h0.view(), c0.view(), None)?;
    let mut grads = LstmLayerParams {
        weight: Array2::zeros(params.weight.dim()),
        bias: Array1::zeros(4 * n),
    };
    let grad_c = &probe * 0.5;
    lstm_cell_backward(&params, &cache, probe.view(), grad_c.view(), &mut grads)?;

    let step = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..params.weight.len() {
        let orig = params.weight.as_slice().unwrap()[idx];
        params.weight.as_slice_mut().unwrap()[idx] = orig + step;
        let up = loss(&params, &x, &h0, &c0, &probe);
        params.weight.as_slice_mut().unwrap()[idx] = orig - step;
        let down = loss(&params, &x, &h0, &c0, &probe);
        params.weight.as_slice_mut().unwrap()[idx] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.weight.as_slice().unwrap()[idx];
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-8 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    println!("checked {} weights, worst relative error {worst:.2e}", params.weight.len());
    Ok(())
}
