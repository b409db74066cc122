use std::fmt::Write;

use crate::slotvec::{MeterContext, OpTally};

use super::lower::LoweredProgram;

pub const CSV_HEADER: &str = "layer,total,add_pc,add_cc,mul_pc,mul_cc,rot";

/// Per-stage operation counts of one execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpReport {
    pub model: String,
    pub n_slots: usize,
    pub rows: Vec<(String, OpTally)>,
    /// Where the output values sit in the final ciphertexts.
    pub output_slots: String,
}

impl OpReport {
    /// Rows in stage order taken from the context's per-layer tallies.
    pub fn from_context(program: &LoweredProgram, ctx: &MeterContext) -> Self {
        let rows = program
            .stages
            .iter()
            .map(|s| (s.label.clone(), ctx.per_layer().get(&s.label).copied().unwrap_or_default()))
            .collect();
        OpReport {
            model: program.model.name.clone(),
            n_slots: program.model.n_slots,
            rows,
            output_slots: program.output.to_string(),
        }
    }

    pub fn total(&self) -> OpTally {
        self.rows.iter().map(|(_, t)| *t).sum()
    }

    pub fn row(&self, label: &str) -> Option<OpTally> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, t)| *t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        let total = self.total();
        for (label, t) in self.rows.iter().map(|(l, t)| (l.as_str(), t)).chain([("Total", &total)]) {
            let cols: Vec<String> = t.columns().iter().map(u64::to_string).collect();
            writeln!(out, "{label},{},{}", t.total(), cols.join(",")).unwrap();
        }
        out
    }

    /// Aligned table; zero counts print as `-`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "model {} (N = {}); output: {}", self.model, self.n_slots, self.output_slots).unwrap();
        let total = self.total();
        let rows: Vec<(&str, &OpTally)> = self.rows.iter().map(|(l, t)| (l.as_str(), t)).chain([("Total", &total)]).collect();
        write_table(&mut out, &rows);
        out
    }
}

fn cell(x: u64) -> String {
    if x == 0 {
        "-".into()
    } else {
        x.to_string()
    }
}

fn write_table(out: &mut String, rows: &[(&str, &OpTally)]) {
    let rows: Vec<(&str, [u64; 6])> = rows
        .iter()
        .map(|(l, t)| {
            let c = t.columns();
            (*l, [t.total(), c[0], c[1], c[2], c[3], c[4]])
        })
        .collect();
    write_rows(out, &rows);
}

/// Rows of `[total, add_pc, add_cc, mul_pc, mul_cc, rot]`, printed as given.
pub fn write_rows(out: &mut String, rows: &[(&str, [u64; 6])]) {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    writeln!(out, "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "layer", "total", "add_pc", "add_cc", "mul_pc", "mul_cc", "rot")
        .unwrap();
    for (label, r) in rows {
        let c = r.map(cell);
        writeln!(out, "{label:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", r[0], c[1], c[2], c[3], c[4], c[5]).unwrap();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> OpReport {
        let a = OpTally { add_pc: 5, add_cc: 40, mul_pc: 45, mul_cc: 0, rot: 0 };
        let b = OpTally { mul_cc: 1, ..Default::default() };
        OpReport { model: "m".into(), n_slots: 16, rows: vec![("Conv1".into(), a), ("Square1".into(), b)], output_slots: "x".into() }
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "Conv1,90,5,40,45,0,0");
        assert_eq!(lines[3], "Total,91,5,40,45,1,0");
    }

    #[test]
    fn table_uses_dashes() {
        let t = report().to_table();
        let sq = t.lines().find(|l| l.starts_with("Square1")).unwrap();
        assert_eq!(sq.split_whitespace().collect::<Vec<_>>(), ["Square1", "1", "-", "-", "-", "1", "-"]);
    }
}
