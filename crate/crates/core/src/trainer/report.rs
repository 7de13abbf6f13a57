use crate::models::Arch;
use crate::simgel::NutClass;
use crate::trainer::metrics::{ClassificationReport, RegressionReport};

const NAME_WIDTH: usize = 20;

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v))
}

fn line(name: &str, cells: &[String], widths: &[usize]) -> String {
    let mut s = format!("{name:<NAME_WIDTH$}");
    for (cell, w) in cells.iter().zip(widths) {
        s.push_str(&format!("  {cell:>w$}"));
    }
    s.trim_end().to_string()
}

pub fn classification_headers() -> Vec<String> {
    let mut h = vec!["Overall".to_string()];
    h.extend(NutClass::ALL.iter().map(|c| c.heading().to_string()));
    h
}

/// Accuracy table with one row per model: overall, then one column per class.
pub fn classification_table(rows: &[(&str, &ClassificationReport)]) -> String {
    let headers = classification_headers();
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(6)).collect();
    let mut out = vec![line("Model", &headers, &widths)];
    for (name, r) in rows {
        let mut cells = vec![percent(Some(r.overall_accuracy))];
        cells.extend((0..NutClass::ALL.len()).map(|c| percent(r.per_class_accuracy.get(c).copied().flatten())));
        out.push(line(name, &cells, &widths));
    }
    out.join("\n") + "\n"
}

pub fn classification_csv(rows: &[(&str, &ClassificationReport)]) -> String {
    let mut out = String::from("model,overall");
    for c in NutClass::ALL {
        out.push(',');
        out.push_str(c.key());
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(name);
        out.push_str(&format!(",{:.6}", r.overall_accuracy));
        for c in 0..NutClass::ALL.len() {
            match r.per_class_accuracy.get(c).copied().flatten() {
                Some(v) => out.push_str(&format!(",{v:.6}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub const REGRESSION_HEADERS: [&str; 2] = ["Contact Position Error (mm)", "Normal Force Error (N)"];

/// Error table with one row per model: position MAE and force MAE.
pub fn regression_table(rows: &[(&str, &RegressionReport)]) -> String {
    let headers: Vec<String> = REGRESSION_HEADERS.iter().map(|s| s.to_string()).collect();
    let widths: Vec<usize> = headers.iter().map(String::len).collect();
    let mut out = vec![line("Model", &headers, &widths)];
    for (name, r) in rows {
        let cells = vec![format!("{:.2}", r.mae_position_mm), format!("{:.2}", r.mae_force_n)];
        out.push(line(name, &cells, &widths));
    }
    out.join("\n") + "\n"
}

pub fn regression_csv(rows: &[(&str, &RegressionReport)]) -> String {
    let mut out = String::from("model,position_mae_mm,force_mae_n\n");
    for (name, r) in rows {
        out.push_str(&format!("{name},{:.6},{:.6}\n", r.mae_position_mm, r.mae_force_n));
    }
    out
}

/// Orders table rows by the fixed architecture order, keeping the given
/// order among rows of the same architecture.
pub fn sort_rows_by_arch<R>(rows: &mut [(Arch, R)]) {
    rows.sort_by_key(|(arch, _)| arch.rank());
}
