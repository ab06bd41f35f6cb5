//! Parser totality and round-trip properties, plus a field-by-field check
//! of the 9-bus case against an independent hand transcription.

mod common;

use proptest::prelude::*;
use sicnm::caseio::{parse_case, parse_case_json, write_case_json, BusType};

#[test]
fn nine_bus_matches_hand_transcription() {
    let case = common::load_case("case9.m");
    assert_eq!(case.name, "case9");
    assert_eq!(case.base_mva, 100.0);
    assert_eq!(case.buses.len(), 9);
    assert_eq!(case.branches.len(), 9);
    assert_eq!(case.gens.len(), 3);

    // bus table transcribed independently of the parser's own path
    let types = [
        BusType::Slack,
        BusType::Pv,
        BusType::Pv,
        BusType::Pq,
        BusType::Pq,
        BusType::Pq,
        BusType::Pq,
        BusType::Pq,
        BusType::Pq,
    ];
    let loads = [
        (0.0, 0.0),
        (0.0, 0.0),
        (0.0, 0.0),
        (0.0, 0.0),
        (90.0, 30.0),
        (0.0, 0.0),
        (100.0, 35.0),
        (0.0, 0.0),
        (125.0, 50.0),
    ];
    for (i, b) in case.buses.iter().enumerate() {
        assert_eq!(b.id, (i + 1) as i64);
        assert_eq!(b.btype, types[i], "bus {}", i + 1);
        assert_eq!((b.pd, b.qd), loads[i], "bus {}", i + 1);
        assert_eq!(b.base_kv, 345.0);
        assert_eq!((b.vmax, b.vmin), (1.1, 0.9));
        assert_eq!((b.vm, b.va), (1.0, 0.0));
        assert_eq!((b.gs, b.bs), (0.0, 0.0));
    }

    let gens = [
        (1, 72.3, 27.03, 1.04),
        (2, 163.0, 6.54, 1.025),
        (3, 85.0, -10.95, 1.025),
    ];
    for (g, (bus, pg, qg, vg)) in case.gens.iter().zip(gens) {
        assert_eq!(g.bus, bus);
        assert_eq!((g.pg, g.qg, g.vg), (pg, qg, vg));
        assert_eq!((g.qmax, g.qmin), (300.0, -300.0));
        assert_eq!(g.status, 1);
    }

    let branches = [
        (1, 4, 0.0, 0.0576, 0.0),
        (4, 5, 0.017, 0.092, 0.158),
        (5, 6, 0.039, 0.17, 0.358),
        (3, 6, 0.0, 0.0586, 0.0),
        (6, 7, 0.0119, 0.1008, 0.209),
        (7, 8, 0.0085, 0.072, 0.149),
        (8, 2, 0.0, 0.0625, 0.0),
        (8, 9, 0.032, 0.161, 0.306),
        (9, 4, 0.01, 0.085, 0.176),
    ];
    for (br, (f, t, r, x, b)) in case.branches.iter().zip(branches) {
        assert_eq!((br.from_bus, br.to_bus), (f, t));
        assert_eq!((br.r, br.x, br.b), (r, x, b));
        assert_eq!(br.tap, 1.0);
        assert_eq!(br.shift, 0.0);
        assert_eq!(br.status, 1);
    }
}

#[test]
fn json_cross_format_equivalence() {
    for name in ["case9.m", "case30s.m", "ill_feeder.m"] {
        let case = common::load_case(name);
        let json = write_case_json(&case);
        let back = parse_case_json(&json).unwrap();
        assert_eq!(case, back, "{name}: .m -> JSON -> parse must be the identity");
    }
}

proptest! {
    /// Totality: arbitrary input never panics; it parses or errors.
    #[test]
    fn parser_never_panics_on_fuzz(input in "\\PC*") {
        let _ = parse_case(&input);
        let _ = parse_case_json(&input);
    }

    /// Totality on almost-valid documents: random mutations of a real case.
    #[test]
    fn parser_never_panics_on_mutated_case(
        pos in 0usize..2000,
        insert in prop::sample::select(vec!["%", ";", "]", "[", "NaN", "1e999", "-", "mpc.bus = [", "\n\n"]),
    ) {
        let base = std::fs::read_to_string(common::case_path("case9.m")).unwrap();
        let cut = pos.min(base.len());
        // splice at a char boundary
        let mut at = cut;
        while !base.is_char_boundary(at) { at -= 1; }
        let mutated = format!("{}{}{}", &base[..at], insert, &base[at..]);
        let _ = parse_case(&mutated);
    }

    /// Round trip: any parsed case survives JSON serialization exactly.
    #[test]
    fn json_round_trip_is_exact(seed in 0u64..50) {
        let mut case = common::load_case("case9.m");
        // deterministic jitter to cover many float values, including
        // awkward decimals
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for b in &mut case.buses {
            b.pd += next() * 1e-3;
            b.vm += next() * 1e-9;
        }
        for br in &mut case.branches {
            br.x += next() * 1e-7;
        }
        let json = write_case_json(&case);
        let back = parse_case_json(&json).unwrap();
        prop_assert_eq!(case, back);
    }

    /// Comment and blank-line insertion between rows never changes the parse.
    #[test]
    fn comments_are_invisible(row_gap in 1usize..9, comment in "[ -~]{0,30}") {
        let base = std::fs::read_to_string(common::case_path("case9.m")).unwrap();
        let a = parse_case(&base).unwrap();
        // inject a comment line after the row_gap-th bus row
        let needle = format!("\t{}\t", row_gap);
        if let Some(pos) = base.find(&needle) {
            if let Some(eol) = base[pos..].find('\n') {
                let at = pos + eol + 1;
                let mutated = format!("{}% {}\n\n{}", &base[..at], comment, &base[at..]);
                let b = parse_case(&mutated).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
