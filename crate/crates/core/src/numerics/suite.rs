//! Self-contained golden checks over the numeric primitives, callable from
//! the CLI so a deployment can verify the kernels on its own hardware.

use std::rc::Rc;

use super::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn record(report: &mut SuiteReport, name: &'static str, passed: bool, detail: String) {
    report.checks.push(CheckResult { name, passed, detail });
}

/// Runs every golden primitive check and reports per-check outcomes.
pub fn primitive_suite() -> SuiteReport {
    let mut report = SuiteReport::default();

    {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let eye = t.leaf(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let c = t.matmul(a, eye);
        let ok = t.value(c).data() == t.value(a).data();
        record(&mut report, "matmul identity", ok, format!("{:?}", t.value(c)));
    }
    {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::filled(vec![1, 8], -2.0));
        let s = t.softmax_rows(a);
        let worst = t.value(s).data().iter().map(|v| (v - 0.125).abs()).fold(0.0, f64::max);
        record(&mut report, "softmax uniform", worst < 1e-12, format!("max deviation {worst:.2e}"));
    }
    {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(vec![1, 6], vec![0.4, -1.0, 2.2, 0.0, 5.5, -3.0]));
        let y = t.layer_norm_rows(a);
        let row = t.value(y).data();
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / 6.0;
        let ok = mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4;
        record(&mut report, "layer norm row stats", ok, format!("mean {mean:.2e} var {var:.6}"));
    }
    {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(vec![3], vec![0.0, 20.0, -20.0]));
        let y = t.gelu(a);
        let v = t.value(y).data();
        let ok = v[0] == 0.0 && v[1] == 20.0 && v[2] == 0.0;
        record(&mut report, "gelu anchors", ok, format!("{v:?}"));
    }
    {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_vec(vec![2], vec![1.0, 3.0]));
        let l = t.mse(a, Rc::new(Tensor::from_vec(vec![2], vec![0.0, 1.0])));
        let ok = t.value(l).data()[0] == 2.5;
        record(&mut report, "mse known value", ok, format!("{}", t.value(l).data()[0]));
    }
    {
        // bitwise replay of an identical graph
        let run = || {
            let mut t = Tape::new();
            let a = t.leaf(Tensor::from_vec(vec![4, 4], (0..16).map(|i| (i as f64) * 0.37 - 2.0).collect()));
            let b = t.leaf(Tensor::from_vec(vec![4, 4], (0..16).map(|i| ((i * 5 % 7) as f64) * 0.21).collect()));
            let c = t.matmul(a, b);
            let s = t.softmax_rows(c);
            let l = t.mean_all(s);
            let g = t.gradient(l, &[a, b]).unwrap();
            (t.value(l).data()[0].to_bits(), g[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        let ok = run() == run();
        record(&mut report, "bitwise determinism", ok, String::new());
    }

    report
}
