pub mod control;
pub mod generate;
pub mod identify;
pub mod rank_check;
pub mod sizing;
pub mod validate;

use jetid::format::sig6;

/// `key = value` report lines.
#[derive(Debug, Default)]
pub struct Report(String);

impl Report {
    pub fn text(&mut self, key: &str, value: impl std::fmt::Display) {
        self.0.push_str(&format!("{key} = {value}\n"));
    }

    pub fn num(&mut self, key: &str, value: f64) {
        self.text(key, sig6(value));
    }

    pub fn params(&mut self, prefix: &str, p: &jetid::JetParams) {
        for (k, v) in jetid::JetParams::KEYS.iter().zip(p.to_array()) {
            self.num(&format!("{prefix}{k}"), v);
        }
    }

    pub fn into_string(self) -> String {
        self.0
    }
}
