#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;
use statrs::function::gamma::gamma;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn record(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("bad record ({e}):\n{}", self.stdout))
    }

    /// Rows of a CSV output, header included.
    pub fn rows(&self) -> Vec<Vec<String>> {
        self.stdout
            .lines()
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }
}

pub fn fracvar(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fracvar"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn bundled(name: &str) -> String {
    format!("{}/problems/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

pub fn scratch_file(name: &str, contents: &str) -> String {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

/// `[0, 1]`, constant orders, zero Lagrangian unless `extra` overrides it.
pub fn simple_problem(name: &str, alpha: &str, lagrangian: &str, extra: &str) -> String {
    scratch_file(
        name,
        &format!(
            "[interval]\na = 0.0\nb = 1.0\n\n[orders]\nalpha = \"{alpha}\"\nbeta = \"{alpha}\"\n\n\
             [lagrangian]\nL = \"{lagrangian}\"\n{extra}"
        ),
    )
}

pub fn alpha(t: f64) -> f64 {
    t * t / 2.0
}

pub fn beta(t: f64) -> f64 {
    (t + 1.0) / 12.0
}

/// Combined Caputo derivative of `x = t` for the bundled examples.
pub fn target(t: f64) -> f64 {
    let (a, b) = (alpha(t), beta(t));
    t.powf(1.0 - a) / (2.0 * gamma(2.0 - a)) + (10.0 - t).powf(1.0 - b) / (2.0 * gamma(2.0 - b))
}

/// Combined Caputo derivative of `x = t^2`: both orders are constant along
/// their integration paths, so each side is a Beta-type integral.
pub fn target_square(t: f64) -> f64 {
    let (a, b) = (alpha(t), beta(t));
    let left = 2.0 * t.powf(2.0 - a) / gamma(3.0 - a);
    let r = 10.0 - t;
    let right = 2.0 / gamma(1.0 - b) * (r.powf(2.0 - b) / (2.0 - b) + t * r.powf(1.0 - b) / (1.0 - b));
    0.5 * left + 0.5 * right
}
