//! Report tables and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use grasp_dlsr::bundle::{canonical_json, FORMAT_VERSION};
use grasp_dlsr::dictlearn::DictMethod;
use grasp_dlsr::evaluation::{DetectionReport, EncoderChoice, RecognitionReport, SceneOutcome};
use grasp_dlsr::features::EncoderKind;
use serde::Serialize;
use serde_json::Value;

use crate::settings::Settings;
use crate::Failure;

pub const CODE_VERSION: &str = concat!("grasp-dlsr ", env!("CARGO_PKG_VERSION"));

/// Table columns, in display order.
pub const ENCODER_COLUMNS: [EncoderChoice; 6] = [
    EncoderChoice::Fixed(EncoderKind::Sc),
    EncoderChoice::Fixed(EncoderKind::Msc),
    EncoderChoice::Fixed(EncoderKind::Omp),
    EncoderChoice::Fixed(EncoderKind::Momp),
    EncoderChoice::Fixed(EncoderKind::St),
    EncoderChoice::Natural,
];

pub fn dict_label(m: DictMethod) -> &'static str {
    match m {
        DictMethod::Sc => "SC",
        DictMethod::Omp => "OMP",
        DictMethod::Gsvq => "GSVQ",
        DictMethod::Nkm => "NKM",
        DictMethod::Rp => "RP",
        DictMethod::R => "R",
    }
}

pub fn encoder_label(e: EncoderChoice) -> &'static str {
    match e {
        EncoderChoice::Natural => "Natural",
        EncoderChoice::Fixed(EncoderKind::Sc) => "SC",
        EncoderChoice::Fixed(EncoderKind::Msc) => "mSC",
        EncoderChoice::Fixed(EncoderKind::Omp) => "OMP",
        EncoderChoice::Fixed(EncoderKind::Momp) => "mOMP",
        EncoderChoice::Fixed(EncoderKind::St) => "ST",
        EncoderChoice::Fixed(EncoderKind::KmeansTri) => "KMeans-Tri",
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Dictionaries as rows, encoders as columns, cells `mean ± std` in percent.
/// Only rows and columns that hold a result are printed.
pub fn recognition_table(reports: &[RecognitionReport]) -> String {
    let cols: Vec<EncoderChoice> = ENCODER_COLUMNS
        .into_iter()
        .chain([EncoderChoice::Fixed(EncoderKind::KmeansTri)])
        .filter(|c| reports.iter().any(|r| r.encoder == *c))
        .collect();
    let mut out = String::from("dictionary");
    for c in &cols {
        let _ = write!(out, "\t{}", encoder_label(*c));
    }
    out.push('\n');
    for m in DictMethod::ALL
        .into_iter()
        .filter(|m| reports.iter().any(|r| r.dict == *m))
    {
        out.push_str(dict_label(m));
        for c in &cols {
            let cell = reports
                .iter()
                .find(|r| r.dict == m && r.encoder == *c)
                .map(|r| format!("{} ± {}", pct(r.mean), pct(r.std)))
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, "\t{cell}");
        }
        out.push('\n');
    }
    out
}

/// One detection result cell, in the recognition table layout.
pub fn detection_table(
    dict: DictMethod,
    encoder: EncoderChoice,
    report: &DetectionReport,
) -> String {
    format!(
        "dictionary\t{}\n{}\t{}\n",
        encoder_label(encoder),
        dict_label(dict),
        pct(report.mean)
    )
}

pub fn outcomes_table(outcomes: &[SceneOutcome]) -> String {
    let mut out = String::from("scene\tfold\tsuccess\tx\ty\ttheta\tw\th\n");
    for o in outcomes {
        let r = &o.rect;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            o.scene, o.fold, o.success as u8, r.x, r.y, r.theta, r.w, r.h
        );
    }
    out
}

/// Provenance shared by every manifest.
pub fn manifest(command: &str, settings: &Settings) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("command".into(), Value::from(command));
    m.insert("code_version".into(), Value::from(CODE_VERSION));
    m.insert("bundle_format".into(), Value::from(FORMAT_VERSION));
    m.insert("seed".into(), Value::from(settings.seed));
    m.insert(
        "settings".into(),
        serde_json::to_value(settings).expect("settings serialize"),
    );
    m
}

pub fn to_value<T: Serialize + ?Sized>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    write_text(path, &(canonical_json(v) + "\n"))
}

pub fn write_manifest(path: &Path, m: BTreeMap<String, Value>) -> Result<(), Failure> {
    write_json(path, &Value::Object(m.into_iter().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(dict: DictMethod, encoder: EncoderChoice, mean: f64) -> RecognitionReport {
        RecognitionReport {
            dict,
            encoder,
            folds: Vec::new(),
            mean,
            std: 0.01,
        }
    }

    #[test]
    fn table_layout() {
        let t = recognition_table(&[
            report(DictMethod::R, EncoderChoice::Natural, 0.9),
            report(DictMethod::Nkm, EncoderChoice::Fixed(EncoderKind::Sc), 0.95),
            report(DictMethod::Nkm, EncoderChoice::Natural, 0.9686),
        ]);
        assert_eq!(
            t,
            "dictionary\tSC\tNatural\nNKM\t95.00 ± 1.00\t96.86 ± 1.00\nR\t-\t90.00 ± 1.00\n"
        );
    }
}
