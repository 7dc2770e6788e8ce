//! Finite-difference checks shared by the gradient tests and the acceptance suite.

use dsc_core::losses::{self, FeatureBatch, LossSpec};
use dsc_core::{build_centers, Centers, LayerSpec, Mat, Model};

use super::{central_diff, matrix, normal_values, rel_err};

pub const STEP: f64 = 1e-5;
pub const LOSS_TOL: f64 = 1e-6;
pub const NET_TOL: f64 = 1e-5;
/// Hinge arguments closer than this to zero are treated as kinks.
pub const HINGE_GAP: f64 = 1e-3;
/// ReLU inputs closer than this to zero are treated as kinks.
pub const RELU_GAP: f64 = 1e-4;

pub struct Case {
    pub name: String,
    pub rel_err: f64,
}

fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    super::lcg_values(seed, n, 1.0)
        .iter()
        .map(|v| (((v + 1.0) / 2.0) * classes as f64) as usize % classes)
        .collect()
}

fn value(f: &Mat, y: &[usize], bg: Option<&Mat>, centers: &Centers, spec: &LossSpec<f64>) -> f64 {
    let mut batch = FeatureBatch::new(f, y);
    if let Some(bg) = bg {
        batch = batch.with_background(bg);
    }
    losses::evaluate(&batch, centers, spec).unwrap().value
}

/// Checks feature (and background) gradients of one loss at a random point.
fn loss_case(name: &str, n: usize, k: usize, d: usize, c: usize, spec: LossSpec<f64>, kinks: impl Fn(&Mat, &[usize], &Mat, &Centers) -> bool) -> Case {
    let centers = build_centers::<f64>(c, d, 1.0).unwrap();
    let (f, y, bg) = (0u64..)
        .map(|seed| {
            let f = Mat::from_vec(n, d, normal_values(100 + seed, n * d)).unwrap();
            let bg = Mat::from_vec(k, d, normal_values(900 + seed, k * d)).unwrap();
            (f, labels(n, c, seed), bg)
        })
        .find(|(f, y, bg)| !kinks(f, y, bg, &centers))
        .unwrap();
    let bg_opt = (k > 0).then_some(&bg);
    let mut batch = FeatureBatch::new(&f, &y);
    if let Some(bg) = bg_opt {
        batch = batch.with_background(bg);
    }
    let out = losses::evaluate(&batch, &centers, &spec).unwrap();

    let numeric_f = central_diff(
        |x| value(&Mat::from_vec(n, d, x.to_vec()).unwrap(), &y, bg_opt, &centers, &spec),
        f.as_slice(),
        STEP,
    );
    let mut analytic = out.feature_grad.as_slice().to_vec();
    let mut numeric = numeric_f;
    if let Some(bg) = bg_opt {
        let numeric_bg = central_diff(
            |x| value(&f, &y, Some(&Mat::from_vec(k, d, x.to_vec()).unwrap()), &centers, &spec),
            bg.as_slice(),
            STEP,
        );
        analytic.extend_from_slice(out.background_grad.as_ref().unwrap().as_slice());
        numeric.extend(numeric_bg);
    }
    Case {
        name: name.to_string(),
        rel_err: rel_err(&analytic, &numeric),
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn loss_cases() -> Vec<Case> {
    let none = |_: &Mat, _: &[usize], _: &Mat, _: &Centers| false;
    let hinge_kink = |m: f64| {
        move |f: &Mat, y: &[usize], _: &Mat, c: &Centers| {
            y.iter().enumerate().any(|(i, &yi)| (sq(f.row(i), c.center(yi)) - m).abs() < HINGE_GAP)
        }
    };
    let background_kink = |m: f64| {
        move |f: &Mat, y: &[usize], bg: &Mat, c: &Centers| {
            y.iter().enumerate().any(|(i, &yi)| {
                let s = c.center(yi);
                let own = sq(f.row(i), s);
                bg.iter_rows().any(|b| (m + own - sq(b, s)).abs() < HINGE_GAP)
            })
        }
    };
    vec![
        loss_case("dsc n=7 d=4 C=3", 7, 0, 4, 3, LossSpec::dsc(), none),
        loss_case(
            "dsc_background n=5 K=4 d=3 C=2",
            5,
            4,
            3,
            2,
            LossSpec::background(1.0, 0.3),
            background_kink(1.0),
        ),
        loss_case(
            "dsc_background defaults n=5 K=4 d=3 C=2",
            5,
            4,
            3,
            2,
            LossSpec::background(0.5, 1.0 / 50.0),
            background_kink(0.5),
        ),
        loss_case("hinge m=2 n=6 d=3 C=3", 6, 0, 3, 3, LossSpec::hinge(2.0), hinge_kink(2.0)),
        loss_case("fixed_softmax n=6 d=3 C=4", 6, 0, 3, 4, LossSpec::fixed_softmax(), none),
    ]
}

pub fn flat_params(model: &Model) -> Vec<f64> {
    model.params().iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn set_params(model: &mut Model, values: &[f64]) {
    let mut offset = 0;
    for p in model.params_mut() {
        let len = p.len();
        p.copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
}

/// Gradient of `sum(r .* model(x))` against central differences, over all
/// parameters and inputs.
pub fn network_case(name: &str, specs: &[LayerSpec], rows: usize) -> Case {
    let (model, x) = (0u64..)
        .map(|seed| {
            let model = Model::new(specs, 7 + seed).unwrap();
            let d = model.input_dim();
            let x = Mat::from_vec(rows, d, normal_values(300 + seed, rows * d)).unwrap();
            (model, x)
        })
        .find(|(model, x)| {
            model
                .relu_inputs(x)
                .unwrap()
                .iter()
                .all(|z| z.as_slice().iter().all(|v| v.abs() >= RELU_GAP))
        })
        .unwrap();
    let out_dim = model.output_dim();
    let r = matrix(rows, out_dim, 55, 1.0);
    let objective = |m: &Model, x: &Mat| -> f64 {
        let out = m.predict(x).unwrap();
        out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
    };

    let mut m = model.clone();
    m.forward(&x).unwrap();
    let grads = m.backward(&r).unwrap();
    let mut analytic: Vec<f64> = grads.params.iter().flatten().copied().collect();
    analytic.extend_from_slice(grads.input.as_slice());

    let mut probe = model.clone();
    let mut numeric = central_diff(
        |p| {
            set_params(&mut probe, p);
            objective(&probe, &x)
        },
        &flat_params(&model),
        STEP,
    );
    numeric.extend(central_diff(
        |xs| objective(&model, &Mat::from_vec(rows, x.cols(), xs.to_vec()).unwrap()),
        x.as_slice(),
        STEP,
    ));
    Case {
        name: name.to_string(),
        rel_err: rel_err(&analytic, &numeric),
    }
}

pub fn network_cases() -> Vec<Case> {
    use LayerSpec::*;
    let dense = |input, output| Dense { input, output };
    let dam = |input, classes, activation| Dam { input, classes, activation };
    vec![
        network_case("dense 3->4", &[dense(3, 4)], 5),
        network_case("relu after dense 3->4", &[dense(3, 4), Relu], 5),
        network_case("dense-relu-dense 5->8->3", &[dense(5, 8), Relu, dense(8, 3)], 6),
        network_case(
            "dense-relu-dense-relu-dense 4->6->5->3",
            &[dense(4, 6), Relu, dense(6, 5), Relu, dense(5, 3)],
            6,
        ),
        network_case("dam d=4 C=10", &[dam(4, 10, true)], 6),
        network_case("dam ablated d=4 C=10", &[dam(4, 10, false)], 6),
        network_case("dense-relu-dam 5->3 C=7", &[dense(5, 3), Relu, dam(3, 7, true)], 6),
    ]
}
