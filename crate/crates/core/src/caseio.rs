//! MATPOWER-format case parsing and the JSON mirror.
//!
//! The `.m` parser accepts the numeric-matrix subset of the format: comments
//! (`%` to end of line), `mpc.baseMVA = <num>;`, and the `mpc.bus`,
//! `mpc.gen`, `mpc.branch` matrix literals with rows separated by `;` or
//! newlines. Trailing columns beyond the documented layout are ignored so
//! solved-case exports still load. MATLAB expression evaluation is out of
//! scope on purpose: every published case in the target corpus uses literal
//! matrices.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("missing section `{0}`")]
    MissingSection(&'static str),
    #[error("malformed row {row} in `{section}` (line {line}): {detail}")]
    MalformedRow {
        section: &'static str,
        row: usize,
        line: usize,
        detail: String,
    },
    #[error("no slack bus (exactly one type-3 bus required, found {found})")]
    NoSlack { found: usize },
    #[error("{kind} row references unknown bus {bus}")]
    DanglingBranch { kind: &'static str, bus: i64 },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    #[serde(rename = "pq")]
    Pq,
    #[serde(rename = "pv")]
    Pv,
    #[serde(rename = "slack")]
    Slack,
}

impl BusType {
    pub fn from_code(code: i64) -> Option<BusType> {
        match code {
            1 => Some(BusType::Pq),
            2 => Some(BusType::Pv),
            3 => Some(BusType::Slack),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: i64,
    pub btype: BusType,
    /// load, MW / MVAr
    pub pd: f64,
    pub qd: f64,
    /// shunt, MW / MVAr injected at V = 1 p.u.
    pub gs: f64,
    pub bs: f64,
    /// voltage magnitude (p.u.) and angle (degrees) from the case table
    pub vm: f64,
    pub va: f64,
    pub base_kv: f64,
    pub vmax: f64,
    pub vmin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from_bus: i64,
    pub to_bus: i64,
    /// series impedance, p.u.
    pub r: f64,
    pub x: f64,
    /// total line charging susceptance, p.u.
    pub b: f64,
    /// off-nominal tap ratio; 0 in the file is normalized to 1.0 at parse
    pub tap: f64,
    /// phase shift, degrees
    pub shift: f64,
    pub status: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub bus: i64,
    /// output, MW / MVAr
    pub pg: f64,
    pub qg: f64,
    /// reactive limits, MVAr
    pub qmax: f64,
    pub qmin: f64,
    /// voltage setpoint, p.u.
    pub vg: f64,
    pub status: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub gens: Vec<GenRecord>,
}

impl NetworkCase {
    /// Position of bus `id` in `buses`, if present.
    pub fn bus_index(&self, id: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.btype == BusType::Slack)
    }

    /// In-service generators attached to the bus at `bus_idx`.
    pub fn gens_at(&self, bus_idx: usize) -> impl Iterator<Item = &GenRecord> {
        let id = self.buses[bus_idx].id;
        self.gens.iter().filter(move |g| g.bus == id && g.status == 1)
    }

    fn validate(&self) -> Result<(), CaseError> {
        if self.base_mva.is_nan() || self.base_mva <= 0.0 {
            return Err(CaseError::InvalidValue(format!(
                "baseMVA must be > 0, got {}",
                self.base_mva
            )));
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return Err(CaseError::InvalidValue(format!("duplicate bus id {}", b.id)));
            }
            let bad = b.vmax.is_nan() || b.vmin.is_nan() || b.vmax < b.vmin || b.vmin <= 0.0;
            if bad {
                return Err(CaseError::InvalidValue(format!(
                    "bus {}: need vmax >= vmin > 0, got vmax={} vmin={}",
                    b.id, b.vmax, b.vmin
                )));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.btype == BusType::Slack).count();
        if slacks != 1 {
            return Err(CaseError::NoSlack { found: slacks });
        }
        for br in &self.branches {
            if br.status > 1 {
                return Err(CaseError::InvalidValue(format!(
                    "branch {}-{}: status must be 0 or 1",
                    br.from_bus, br.to_bus
                )));
            }
            for (kind, bus) in [("branch", br.from_bus), ("branch", br.to_bus)] {
                if !ids.contains(&bus) {
                    return Err(CaseError::DanglingBranch { kind, bus });
                }
            }
        }
        for g in &self.gens {
            if g.status > 1 {
                return Err(CaseError::InvalidValue(format!(
                    "gen at bus {}: status must be 0 or 1",
                    g.bus
                )));
            }
            if g.qmax.is_nan() || g.qmin.is_nan() || g.qmax < g.qmin {
                return Err(CaseError::InvalidValue(format!(
                    "gen at bus {}: qmax {} < qmin {}",
                    g.bus, g.qmax, g.qmin
                )));
            }
            if !ids.contains(&g.bus) {
                return Err(CaseError::DanglingBranch { kind: "gen", bus: g.bus });
            }
        }
        Ok(())
    }
}

/// A numeric matrix literal plus the source line of each row.
struct RawMatrix {
    rows: Vec<Vec<f64>>,
    lines: Vec<usize>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn find_matrix(text: &str, key: &'static str) -> Result<Option<RawMatrix>, CaseError> {
    // locate `mpc.<key> = [ ... ];` ignoring comments
    let mut in_matrix = false;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    let mut pending = String::new();
    let mut pending_line = 0usize;
    let needle = format!("mpc.{key}");

    for (lineno, raw) in text.lines().enumerate() {
        let mut line = strip_comment(raw);
        if !in_matrix {
            let Some(pos) = line.find(&needle) else { continue };
            let after = &line[pos + needle.len()..];
            let Some(eq) = after.find('=') else { continue };
            let Some(br) = after[eq..].find('[') else { continue };
            in_matrix = true;
            line = &after[eq + br + 1..];
            pending_line = lineno + 1;
        }
        // inside the matrix body now
        let (body, done) = match line.find(']') {
            Some(pos) => (&line[..pos], true),
            None => (line, false),
        };
        for ch in body.chars() {
            if ch == ';' || ch == '\n' {
                flush_row(key, &mut pending, pending_line, &mut rows, &mut lines)?;
                pending_line = lineno + 1;
            } else {
                pending.push(ch);
            }
        }
        if done {
            flush_row(key, &mut pending, pending_line, &mut rows, &mut lines)?;
            return Ok(Some(RawMatrix { rows, lines }));
        }
        // newline acts as a row separator as well
        flush_row(key, &mut pending, pending_line, &mut rows, &mut lines)?;
        pending_line = lineno + 2;
    }
    if in_matrix {
        return Err(CaseError::MalformedRow {
            section: key,
            row: rows.len(),
            line: pending_line,
            detail: "unterminated matrix (missing `]`)".into(),
        });
    }
    Ok(None)
}

fn flush_row(
    section: &'static str,
    pending: &mut String,
    line: usize,
    rows: &mut Vec<Vec<f64>>,
    lines: &mut Vec<usize>,
) -> Result<(), CaseError> {
    let text = pending.trim().to_string();
    pending.clear();
    if text.is_empty() {
        return Ok(());
    }
    let mut row = Vec::new();
    for tok in text.split([' ', '\t', ',']).filter(|t| !t.is_empty()) {
        let v: f64 = tok.parse().map_err(|_| CaseError::MalformedRow {
            section,
            row: rows.len() + 1,
            line,
            detail: format!("non-numeric token `{tok}`"),
        })?;
        row.push(v);
    }
    rows.push(row);
    lines.push(line);
    Ok(())
}

fn require_columns(section: &'static str, m: &RawMatrix, min: usize) -> Result<(), CaseError> {
    let Some(first) = m.rows.first() else { return Ok(()) };
    let width = first.len();
    for (i, row) in m.rows.iter().enumerate() {
        if row.len() != width {
            return Err(CaseError::MalformedRow {
                section,
                row: i + 1,
                line: m.lines[i],
                detail: format!("ragged row: {} columns, expected {}", row.len(), width),
            });
        }
    }
    if width < min {
        return Err(CaseError::MalformedRow {
            section,
            row: 1,
            line: m.lines[0],
            detail: format!("{width} columns, need at least {min}"),
        });
    }
    Ok(())
}

fn find_scalar(text: &str, key: &'static str) -> Option<f64> {
    let needle = format!("mpc.{key}");
    for raw in text.lines() {
        let line = strip_comment(raw);
        if let Some(pos) = line.find(&needle) {
            let after = &line[pos + needle.len()..];
            if let Some(eq) = after.find('=') {
                let rhs = after[eq + 1..].trim().trim_end_matches(';').trim();
                if let Ok(v) = rhs.parse::<f64>() {
                    return Some(v);
                }
            }
        }
    }
    None
}

fn find_name(text: &str) -> String {
    for raw in text.lines() {
        let line = strip_comment(raw).trim();
        if let Some(rest) = line.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                return rest[eq + 1..].trim().trim_end_matches(';').trim().to_string();
            }
        }
    }
    String::new()
}

/// Parse a MATPOWER `.m` case document into the per-unit network model.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let base_mva = find_scalar(text, "baseMVA").ok_or(CaseError::MissingSection("baseMVA"))?;
    let bus = find_matrix(text, "bus")?.ok_or(CaseError::MissingSection("bus"))?;
    let gen = find_matrix(text, "gen")?.ok_or(CaseError::MissingSection("gen"))?;
    let branch = find_matrix(text, "branch")?.ok_or(CaseError::MissingSection("branch"))?;
    require_columns("bus", &bus, 13)?;
    require_columns("gen", &gen, 10)?;
    require_columns("branch", &branch, 11)?;

    let mut buses = Vec::with_capacity(bus.rows.len());
    for (i, row) in bus.rows.iter().enumerate() {
        let code = row[1] as i64;
        let btype = BusType::from_code(code).ok_or_else(|| CaseError::MalformedRow {
            section: "bus",
            row: i + 1,
            line: bus.lines[i],
            detail: format!("bus type {code} not in {{1,2,3}}"),
        })?;
        buses.push(BusRecord {
            id: row[0] as i64,
            btype,
            pd: row[2],
            qd: row[3],
            gs: row[4],
            bs: row[5],
            vm: row[7],
            va: row[8],
            base_kv: row[9],
            vmax: row[11],
            vmin: row[12],
        });
    }

    let mut gens = Vec::with_capacity(gen.rows.len());
    for row in &gen.rows {
        gens.push(GenRecord {
            bus: row[0] as i64,
            pg: row[1],
            qg: row[2],
            qmax: row[3],
            qmin: row[4],
            vg: row[5],
            status: if row[7] != 0.0 { 1 } else { 0 },
        });
    }

    let mut branches = Vec::with_capacity(branch.rows.len());
    for row in &branch.rows {
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        branches.push(BranchRecord {
            from_bus: row[0] as i64,
            to_bus: row[1] as i64,
            r: row[2],
            x: row[3],
            b: row[4],
            tap,
            shift: row[9],
            status: if row[10] != 0.0 { 1 } else { 0 },
        });
    }

    let case = NetworkCase {
        name: find_name(text),
        base_mva,
        buses,
        branches,
        gens,
    };
    case.validate()?;
    Ok(case)
}

/// Serialize to the JSON mirror. Numbers are written in shortest
/// round-trip-safe decimal form, so `parse_case_json(write_case_json(c))`
/// reproduces `c` bit for bit.
pub fn write_case_json(case: &NetworkCase) -> String {
    serde_json::to_string_pretty(case).expect("case serialization cannot fail")
}

/// Parse the JSON mirror; runs the same validation as [`parse_case`].
pub fn parse_case_json(text: &str) -> Result<NetworkCase, CaseError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CaseError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(CaseError::Json("top level must be an object".into()))?;
    for key in ["name", "base_mva", "buses", "branches", "gens"] {
        if !obj.contains_key(key) {
            return Err(CaseError::MissingSection(match key {
                "name" => "name",
                "base_mva" => "base_mva",
                "buses" => "buses",
                "branches" => "branches",
                _ => "gens",
            }));
        }
    }
    let case: NetworkCase =
        serde_json::from_value(value).map_err(|e| CaseError::Json(e.to_string()))?;
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0   0  0 0 1 1 0 345 1 1.1 0.9;
    2 1 100 50 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 300 -300 1 100 1 250 10;
];
mpc.branch = [
    1 2 0 0.1 0 250 250 250 0 0 1;
];
";

    #[test]
    fn minimal_two_bus_document() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "two_bus");
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.buses[0].btype, BusType::Slack);
        assert_eq!(case.buses[1].pd, 100.0);
        assert_eq!(case.branches[0].x, 0.1);
        assert_eq!(case.branches[0].tap, 1.0, "tap 0 normalizes to 1");
    }

    #[test]
    fn non_numeric_token_is_malformed_row() {
        let bad = TWO_BUS.replace("2 1 100 50", "2 1 abc 50");
        match parse_case(&bad) {
            Err(CaseError::MalformedRow { section: "bus", detail, .. }) => {
                assert!(detail.contains("abc"));
            }
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_malformed() {
        let bad = TWO_BUS.replace("    2 1 100 50 0 0 1 1 0 345 1 1.1 0.9;", "    2 1 100 50 0 0 1 1 0 345 1 1.1;");
        assert!(matches!(parse_case(&bad), Err(CaseError::MalformedRow { .. })));
    }

    #[test]
    fn missing_section_is_reported() {
        let bad = TWO_BUS.replace("mpc.gen", "mpc.nope");
        assert!(matches!(parse_case(&bad), Err(CaseError::MissingSection("gen"))));
    }

    #[test]
    fn no_slack_is_reported() {
        let bad = TWO_BUS.replace("1 3 0   0", "1 1 0   0");
        assert!(matches!(parse_case(&bad), Err(CaseError::NoSlack { found: 0 })));
    }

    #[test]
    fn dangling_branch_is_reported() {
        let bad = TWO_BUS.replace("1 2 0 0.1", "1 9 0 0.1");
        assert!(matches!(
            parse_case(&bad),
            Err(CaseError::DanglingBranch { kind: "branch", bus: 9 })
        ));
    }

    #[test]
    fn comments_and_blank_lines_do_not_change_the_parse() {
        let commented = TWO_BUS
            .replace(
                "mpc.bus = [",
                "% leading comment\nmpc.bus = [\n  % a row comment\n",
            )
            .replace("mpc.branch = [", "mpc.branch = [ % trailing\n");
        let a = parse_case(TWO_BUS).unwrap();
        let b = parse_case(&commented).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rows_may_share_a_line() {
        let squashed = TWO_BUS.replace(
            "    1 3 0   0  0 0 1 1 0 345 1 1.1 0.9;\n    2 1 100 50 0 0 1 1 0 345 1 1.1 0.9;\n",
            "    1 3 0 0 0 0 1 1 0 345 1 1.1 0.9; 2 1 100 50 0 0 1 1 0 345 1 1.1 0.9;\n",
        );
        let a = parse_case(TWO_BUS).unwrap();
        let b = parse_case(&squashed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extra_trailing_columns_are_ignored() {
        let extended = TWO_BUS.replace(
            "    2 1 100 50 0 0 1 1 0 345 1 1.1 0.9;",
            "    2 1 100 50 0 0 1 1 0 345 1 1.1 0.9 42.0 7.5;",
        );
        // widths must stay uniform within one matrix
        let extended = extended.replace(
            "    1 3 0   0  0 0 1 1 0 345 1 1.1 0.9;",
            "    1 3 0   0  0 0 1 1 0 345 1 1.1 0.9 0 0;",
        );
        let case = parse_case(&extended).unwrap();
        assert_eq!(case.buses.len(), 2);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let case = parse_case(TWO_BUS).unwrap();
        let json = write_case_json(&case);
        let back = parse_case_json(&json).unwrap();
        assert_eq!(case, back);
    }

    #[test]
    fn json_missing_branches_section() {
        let case = parse_case(TWO_BUS).unwrap();
        let json = write_case_json(&case).replace("\"branches\"", "\"lines\"");
        assert!(matches!(parse_case_json(&json), Err(CaseError::MissingSection("branches"))));
    }

    #[test]
    fn json_dangling_branch() {
        let case = parse_case(TWO_BUS).unwrap();
        let json = write_case_json(&case).replace("\"to_bus\": 2", "\"to_bus\": 99");
        assert!(matches!(
            parse_case_json(&json),
            Err(CaseError::DanglingBranch { bus: 99, .. })
        ));
    }

    #[test]
    fn exponent_notation_is_accepted() {
        let doc = TWO_BUS.replace("2 1 100 50", "2 1 1.0e2 5.0E1");
        let case = parse_case(&doc).unwrap();
        assert_eq!(case.buses[1].pd, 100.0);
        assert_eq!(case.buses[1].qd, 50.0);
    }
}
