//! Built-in benchmark systems with known ground truth.

use crate::linalg::Mat;
use crate::model::{BasisLibrary, GroundTruth, LibraryModel, SdrModel};
use crate::sim::{ExperimentSpec, InputSignal, NoiseSpec};

/// Two-state system with `sinc`, quadratic, `|·|` and `exp` entries.
pub mod example1 {
    use super::*;

    pub const RADIUS: f64 = 1.1;

    pub fn model() -> SdrModel {
        SdrModel::parse(
            &[&["1 + 0.1*sinc(x1)", "0.2"], &["0.2", "0.9 + 0.1*x1^2"]],
            &[&["0.1 + 0.1*abs(x2)"], &["0.1*exp(x1)"]],
            RADIUS,
        )
        .expect("example1 model is well formed")
    }

    /// A feasible Lyapunov certificate `(Γ, Y, ε_Γ)` with its gain,
    /// given to four decimals.
    pub fn reference_certificate() -> (Mat, Mat, f64) {
        (Mat::identity(2, 2) * 34.3888, Mat::from_row_slice(1, 2, &[-65.0340, -78.9831]), 0.1402)
    }

    pub fn reference_gain() -> Mat {
        Mat::from_row_slice(1, 2, &[-1.8911, -2.2968])
    }
}

/// The system of [`example1`] written over a basis library, for the
/// data-driven path.
pub mod example3 {
    use super::*;

    pub const RADIUS: f64 = 0.92;
    pub const THETA: f64 = 0.0021;

    pub fn library() -> BasisLibrary {
        BasisLibrary::parse(
            &[&["1", "sinc(x1)"], &["1", "x1", "x1^2"]],
            &[&["1", "abs(x1)", "abs(x2)", "exp(x1)", "exp(x2)"]],
        )
        .expect("example3 library is well formed")
    }

    pub fn truth() -> GroundTruth {
        GroundTruth {
            e_a: Mat::from_row_slice(2, 5, &[1.0, 0.1, 0.2, 0.0, 0.0, 0.2, 0.0, 0.9, 0.0, 0.1]),
            e_b: Mat::from_row_slice(2, 5, &[0.1, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0]),
        }
    }

    pub fn library_model() -> LibraryModel {
        LibraryModel::new(library(), truth()).expect("example3 truth matches library")
    }

    pub fn theta() -> Mat {
        Mat::identity(2, 2) * THETA
    }

    /// 10 experiments of 13 transitions, inputs uniform on `[-1.3, 1.3]`.
    pub fn experiment_spec(seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            count: 10,
            length: 13,
            x0_bound: 1.0,
            input: InputSignal::Uniform { bound: 1.3 },
            noise: NoiseSpec::Whitened { theta: theta(), fill: 0.99 },
            state_limit: Some(10.0),
            seed,
        }
    }

    pub fn gain() -> Mat {
        Mat::from_row_slice(1, 2, &[-2.1797, -2.2750])
    }
}

/// Quadrotor attitude dynamics, forward-Euler discretized.
pub mod quadrotor {
    use super::*;

    pub const H: f64 = 0.002;
    pub const J: [f64; 3] = [0.01668, 0.01772, 0.02966];
    pub const RADIUS: f64 = 0.4;
    pub const THETA: f64 = 3.5e-5;

    fn coupling() -> [f64; 3] {
        let [j1, j2, j3] = J;
        [H * (j2 - j3) / j1, H * (j3 - j1) / j2, H * (j1 - j2) / j3]
    }

    pub fn model() -> SdrModel {
        let [c4, c5, c6] = coupling();
        let h = H;
        let a = vec![
            vec!["1".into(), "0".into(), "0".into(), format!("{h:?}"), format!("{h:?}*sin(x1)*tan(x2)"), format!("{h:?}*cos(x1)*tan(x2)")],
            vec!["0".into(), "1".into(), "0".into(), "0".into(), format!("{h:?}*cos(x1)"), format!("-{h:?}*sin(x1)")],
            vec!["0".into(), "0".into(), "1".into(), "0".into(), format!("{h:?}*sin(x1)/cos(x2)"), format!("{h:?}*cos(x1)/cos(x2)")],
            vec!["0".into(), "0".into(), "0".into(), "1".into(), "0".into(), format!("{c4:?}*x5")],
            vec!["0".into(), "0".into(), "0".into(), format!("{c5:?}*x6"), "1".into(), "0".into()],
            vec!["0".into(), "0".into(), "0".into(), "0".into(), format!("{c6:?}*x4"), "1".into()],
        ];
        let b: Vec<Vec<String>> = (0..6)
            .map(|i| (0..3).map(|j| if i == j + 3 { format!("{:?}", H / J[j]) } else { "0".into() }).collect())
            .collect();
        fn grid(g: &[Vec<String>]) -> Vec<Vec<&str>> {
            g.iter().map(|r| r.iter().map(String::as_str).collect()).collect()
        }
        let (ga, gb) = (grid(&a), grid(&b));
        let ra: Vec<&[&str]> = ga.iter().map(Vec::as_slice).collect();
        let rb: Vec<&[&str]> = gb.iter().map(Vec::as_slice).collect();
        SdrModel::parse(&ra, &rb, RADIUS).expect("quadrotor model is well formed")
    }

    pub fn library() -> BasisLibrary {
        BasisLibrary::parse(
            &[
                &["1"],
                &["1"],
                &["1"],
                &["1", "x6"],
                &["1", "sin(x1)*tan(x2)", "cos(x1)", "sin(x1)/cos(x2)", "x4"],
                &["1", "cos(x1)*tan(x2)", "sin(x1)", "cos(x1)/cos(x2)", "x5"],
            ],
            &[&["1"], &["1"], &["1"]],
        )
        .expect("quadrotor library is well formed")
    }

    pub fn truth() -> GroundTruth {
        let [c4, c5, c6] = coupling();
        let h = H;
        let e = |i: usize, v: f64| {
            let mut c = [0.0; 6];
            c[i] = v;
            c
        };
        let mut cols: Vec<[f64; 6]> = vec![e(0, 1.0), e(1, 1.0), e(2, 1.0)];
        let mut col4 = e(3, 1.0);
        col4[0] = h;
        cols.extend([col4, e(4, c5)]);
        cols.extend([e(4, 1.0), e(0, h), e(1, h), e(2, h), e(5, c6)]);
        cols.extend([e(5, 1.0), e(0, h), e(1, -h), e(2, h), e(3, c4)]);
        let e_a = Mat::from_fn(6, cols.len(), |i, j| cols[j][i]);
        let e_b = Mat::from_fn(6, 3, |i, j| if i == j + 3 { H / J[j] } else { 0.0 });
        GroundTruth { e_a, e_b }
    }

    pub fn library_model() -> LibraryModel {
        LibraryModel::new(library(), truth()).expect("quadrotor truth matches library")
    }

    pub fn theta() -> Mat {
        Mat::identity(6, 6) * THETA
    }

    /// 20 one-second experiments with sinusoidal torques.
    pub fn experiment_spec(seed: u64) -> ExperimentSpec {
        use std::f64::consts::PI;
        ExperimentSpec {
            count: 20,
            length: 500,
            x0_bound: 0.1,
            input: InputSignal::Sinusoids {
                dt: H,
                omega: vec![50.0 * PI, 37.0 * PI, 21.0 * PI],
                phase: vec![PI / 10.0, PI / 3.0, PI / 2.0],
                amplitude: vec![1.0, 1.0, 1.0],
            },
            noise: NoiseSpec::Whitened { theta: theta(), fill: 0.99 },
            state_limit: None,
            seed,
        }
    }

    pub fn test_initial_state() -> [f64; 6] {
        [0.1, 0.1, 0.1, -0.1, -0.1, -0.1]
    }
}
