//! Verdict bookkeeping for the acceptance run in `tests/acceptance.rs`.

use std::time::Instant;

use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub id: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!("{} {} ({:.1} s) {}", self.id, if self.pass { "PASS" } else { "FAIL" }, self.seconds, self.detail)
    }
}

/// Criteria selected through `DK_AC` (comma-separated numbers); all when unset.
pub fn selected(id: usize) -> bool {
    match std::env::var("DK_AC") {
        Ok(list) if !list.trim().is_empty() => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        _ => true,
    }
}

/// Times a criterion, prints its verdict line and keeps it for the summary.
pub struct Runner {
    pub verdicts: Vec<Verdict>,
    out_dir: Option<std::path::PathBuf>,
}

impl Default for Runner {
    fn default() -> Self {
        Self::new()
    }
}

impl Runner {
    /// Reports are written to `DK_ACCEPTANCE_OUT` when it is set.
    pub fn new() -> Self {
        let out_dir = std::env::var_os("DK_ACCEPTANCE_OUT").map(Into::into);
        Self { verdicts: Vec::new(), out_dir }
    }

    pub fn run(&mut self, id: usize, f: impl FnOnce(&Self) -> dklab::Result<(bool, String)>) {
        if !selected(id) {
            return;
        }
        let start = Instant::now();
        let (pass, detail) = match f(self) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let v = Verdict { id: format!("AC-{id}"), pass, detail, seconds: start.elapsed().as_secs_f64() };
        println!("{}", v.line());
        self.verdicts.push(v);
    }

    pub fn save<T: Serialize>(&self, name: &str, value: &T) -> dklab::Result<()> {
        match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                dklab::io::write_json(&dir.join(name), value)
            }
            None => Ok(()),
        }
    }

    pub fn finish(self) -> bool {
        let failed: Vec<&str> = self.verdicts.iter().filter(|v| !v.pass).map(|v| v.id.as_str()).collect();
        println!(
            "acceptance: {} passed, {} failed{}",
            self.verdicts.len() - failed.len(),
            failed.len(),
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
        );
        if let Some(dir) = &self.out_dir {
            let _ = dklab::io::write_json(&dir.join("verdicts.json"), &self.verdicts);
        }
        failed.is_empty()
    }
}
