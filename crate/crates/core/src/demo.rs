//! A small deterministic workload: exponential decay du/dt = -k u with
//! u(0) = 1, integrated with a fixed step. Used by the bundled demo
//! campaign and the end-to-end tests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::campaign::CAMPAIGN_FILE;
use crate::results::{ResultTable, RESULTS_FILE};
use crate::shell;

const TEMPLATE: &str = include_str!("../campaigns/demo.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Explicit Euler, first order.
    #[default]
    Euler,
    /// Heun's method (explicit trapezoid), second order.
    Heun,
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            other => Err(format!("unknown scheme `{other}` (expected euler or heun)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    pub decay_rate: f64,
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
}

impl Decay {
    pub fn validate(&self) -> Result<(), String> {
        if !self.decay_rate.is_finite() {
            return Err("decay rate must be finite".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err("t_final must be non-negative".into());
        }
        if self.t_final / self.dt > 1e8 {
            return Err("too many steps".into());
        }
        Ok(())
    }

    /// Series `t`, `u` and `l1 = |u - exp(-k t)|`, from t = 0 to t_final.
    /// The last step is shortened to land exactly on t_final.
    pub fn solve(&self) -> ResultTable {
        let k = self.decay_rate;
        let steps = (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize;
        let mut t = vec![0.0];
        let mut u = vec![1.0];
        for i in 1..=steps {
            let ti = if i == steps { self.t_final } else { i as f64 * self.dt };
            let h = ti - t[i - 1];
            let prev = u[i - 1];
            let next = match self.scheme {
                Scheme::Euler => prev - h * k * prev,
                Scheme::Heun => {
                    let pred = prev - h * k * prev;
                    prev - 0.5 * h * k * (prev + pred)
                }
            };
            t.push(ti);
            u.push(next);
        }
        let l1 = t.iter().zip(&u).map(|(t, u)| (u - (-k * t).exp()).abs()).collect();
        ResultTable::from_series(RESULTS_FILE, vec![("t".into(), t), ("u".into(), u), ("l1".into(), l1)])
            .expect("equal-length series")
    }

    /// Solves, writes `results.csv` into `output_dir` and returns the CSV
    /// text that was written.
    pub fn run(&self, output_dir: &Path) -> io::Result<String> {
        let csv = self.solve().to_csv();
        fs::create_dir_all(output_dir)?;
        fs::write(output_dir.join(RESULTS_FILE), &csv)?;
        Ok(csv)
    }
}

/// Writes the bundled demo campaign into `dir`, running cases through
/// `exe demo-simulate`. Returns the campaign file path.
pub fn write_campaign(dir: &Path, exe: &Path) -> io::Result<PathBuf> {
    let base = format!("{} demo-simulate", shell::quote(&exe.to_string_lossy()));
    let text = TEMPLATE.replace("@BASE_COMMAND@", &toml::Value::String(base).to_string());
    fs::create_dir_all(dir)?;
    let path = dir.join(CAMPAIGN_FILE);
    fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::CampaignFile;

    fn decay(k: f64, dt: f64, t_final: f64, scheme: Scheme) -> ResultTable {
        Decay {
            decay_rate: k,
            dt,
            t_final,
            scheme,
        }
        .solve()
    }

    #[test]
    fn single_euler_step() {
        let r = decay(1.0, 0.5, 0.5, Scheme::Euler);
        assert_eq!(r.series("t").unwrap(), [0.0, 0.5]);
        assert_eq!(r.series("u").unwrap(), [1.0, 0.5]);
    }

    #[test]
    fn zero_rate_conserves() {
        for scheme in [Scheme::Euler, Scheme::Heun] {
            let r = decay(0.0, 0.1, 1.0, scheme);
            assert!(r.series("u").unwrap().iter().all(|u| *u == 1.0));
            assert!(r.series("l1").unwrap().iter().all(|e| *e == 0.0));
        }
    }

    #[test]
    fn last_step_lands_on_t_final() {
        let r = decay(1.0, 0.3, 1.0, Scheme::Euler);
        let t = r.series("t").unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(*t.last().unwrap(), 1.0);
        // 0.1 does not divide 1.0 exactly in binary; no sliver step is added
        assert_eq!(decay(1.0, 0.1, 1.0, Scheme::Euler).len(), 11);
    }

    /// Reference solution by classical RK4 with a much finer step,
    /// independent of the closed form used for `l1`.
    fn reference(k: f64, t: f64) -> f64 {
        let n = 100_000;
        let h = t / n as f64;
        let f = |u: f64| -k * u;
        let mut u = 1.0;
        for _ in 0..n {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        u
    }

    fn max_error(dt: f64, scheme: Scheme) -> f64 {
        let r = decay(1.0, dt, 1.0, scheme);
        let t = r.series("t").unwrap();
        let u = r.series("u").unwrap();
        t.iter().zip(u).map(|(t, u)| (u - reference(1.0, *t)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn euler_converges_at_first_order() {
        let coarse = max_error(0.1, Scheme::Euler);
        let fine = max_error(0.01, Scheme::Euler);
        assert!(fine < coarse);
        let ratio = max_error(0.02, Scheme::Euler) / max_error(0.01, Scheme::Euler);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn heun_converges_at_second_order() {
        let ratio = max_error(0.02, Scheme::Heun) / max_error(0.01, Scheme::Heun);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn l1_matches_reference() {
        let r = decay(1.0, 0.05, 1.0, Scheme::Euler);
        for ((t, u), e) in r.series("t").unwrap().iter().zip(r.series("u").unwrap()).zip(r.series("l1").unwrap()) {
            assert!((e - (u - reference(1.0, *t)).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn written_file_equals_audit_text() {
        let tmp = tempfile::tempdir().unwrap();
        let d = Decay {
            decay_rate: 2.0,
            dt: 0.01,
            t_final: 0.37,
            scheme: Scheme::Heun,
        };
        let echoed = d.run(tmp.path()).unwrap();
        let reloaded = ResultTable::read(&tmp.path().join(RESULTS_FILE)).unwrap();
        let audited = ResultTable::parse(&echoed, "audit").unwrap();
        for name in ["t", "u", "l1"] {
            assert_eq!(reloaded.series(name), audited.series(name));
        }
        assert_eq!(reloaded.series("u"), d.solve().series("u"));
    }

    #[test]
    fn invalid_parameters() {
        let ok = Decay {
            decay_rate: 1.0,
            dt: 0.1,
            t_final: 1.0,
            scheme: Scheme::Euler,
        };
        assert!(ok.validate().is_ok());
        assert!(Decay { dt: 0.0, ..ok }.validate().is_err());
        assert!(Decay { t_final: -1.0, ..ok }.validate().is_err());
        assert!(Decay { decay_rate: f64::NAN, ..ok }.validate().is_err());
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn bundled_campaign_has_eight_cases() {
        let tmp = tempfile::tempdir().unwrap();
        let path = write_campaign(tmp.path(), Path::new("/opt/my tools/automan")).unwrap();
        let c = CampaignFile::load(&path).unwrap();
        let p = &c.problems[0];
        assert_eq!(p.cases().len(), 8);
        assert_eq!(p.recipes().len(), 2);
        assert_eq!(
            p.cases()[0].command(),
            "'/opt/my tools/automan' demo-simulate --decay-rate=1 --t-final=1 --scheme=euler --dt=0.1"
        );
        assert_eq!(p.cases()[0].name(), "euler_dt_0.1");
    }
}
