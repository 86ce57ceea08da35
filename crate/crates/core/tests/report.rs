//! Report statistics on constructed curves, recomputed by hand.

use gbhs::report::{k_stats, median_evaluations, read_curve, stability_ratio, summarize, write_curves_csv, MethodCurves};
use gbhs::training::{write_curve_csv, CurvePoint};

fn curve(points: &[(u64, usize)]) -> Vec<CurvePoint> {
    points.iter().map(|&(evaluations, correct_found)| CurvePoint { evaluations, correct_found }).collect()
}

/// A curve that solves one question every `per` evaluations, `n` times,
/// with a few extra evaluations recorded between solves.
fn steady(per: u64, n: usize) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for i in 1..=n as u64 {
        out.push(CurvePoint { evaluations: i * per - 1, correct_found: i as usize - 1 });
        out.push(CurvePoint { evaluations: i * per, correct_found: i as usize });
    }
    out
}

#[test]
fn half_the_evaluations_gives_ratio_one_half() {
    let a = MethodCurves { method: "a".into(), curves: vec![steady(20, 50), steady(22, 50), steady(18, 50)] };
    let b = MethodCurves { method: "b".into(), curves: vec![steady(40, 50), steady(44, 50), steady(36, 50)] };
    let report = summarize(&[a, b], 50);
    assert_eq!(report.k_common, 50);
    let ratio = report.ratio.unwrap();
    assert!((ratio - 0.5).abs() <= 0.01, "{ratio}");
    // k = 1..50 seed means are 20k for a, the median of 20, 40, ..., 1000 is 510
    assert!((report.methods[0].median_evaluations.unwrap() - 510.0).abs() < 1e-9);
    assert!((report.methods[1].median_evaluations.unwrap() - 1020.0).abs() < 1e-9);
    // stability at k = 25: 22*25 / 18*25
    assert!((report.methods[0].stability - 22.0 / 18.0).abs() < 1e-12);
}

#[test]
fn identical_traces_collapse_statistics() {
    let c = curve(&[(0, 0), (3, 1), (9, 2), (10, 3), (40, 3)]);
    let curves = vec![c.clone(), c.clone()];
    for k in 1..=3 {
        let s = k_stats(&curves, k);
        let mean = s.mean.unwrap();
        assert_eq!(s.min, s.max);
        assert_eq!(mean, s.min.unwrap() as f64);
    }
    assert_eq!(stability_ratio(&curves, 2), 1.0);
}

#[test]
fn single_trace_reports_its_own_numbers() {
    let c = curve(&[(1, 0), (4, 1), (4, 2), (12, 3), (30, 4)]);
    let curves = vec![c];
    let want = [4u64, 4, 12, 30];
    for (k, &w) in (1..=4).zip(&want) {
        let s = k_stats(&curves, k);
        assert_eq!((s.reached, s.min, s.max, s.mean), (1, Some(w), Some(w), Some(w as f64)));
    }
    assert_eq!(k_stats(&curves, 5).reached, 0);
    // median of 4, 4, 12, 30
    assert_eq!(median_evaluations(&curves, 4), Some(8.0));
}

#[test]
fn spreadsheet_recomputation() {
    let seeds = vec![
        curve(&[(5, 1), (9, 2), (30, 3)]),
        curve(&[(2, 1), (15, 2), (16, 3), (90, 4)]),
        curve(&[(7, 1), (7, 2), (50, 3)]),
    ];
    // k=1: 5,2,7 mean 14/3; k=2: 9,15,7 mean 31/3; k=3: 30,16,50 mean 32
    let means = [14.0 / 3.0, 31.0 / 3.0, 32.0];
    for (k, &m) in (1..=3).zip(&means) {
        assert!((k_stats(&seeds, k).mean.unwrap() - m).abs() < 1e-12);
    }
    assert!((median_evaluations(&seeds, 3).unwrap() - 31.0 / 3.0).abs() < 1e-12);
    assert_eq!(stability_ratio(&seeds, 3), 50.0 / 16.0);
    assert_eq!(stability_ratio(&seeds, 4), f64::INFINITY);
    let k4 = k_stats(&seeds, 4);
    assert_eq!((k4.reached, k4.mean), (1, None));

    let mut csv = Vec::new();
    write_curves_csv(&[MethodCurves { method: "m".into(), curves: seeds }], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let row3 = text.lines().find(|l| l.starts_with("m,3,")).unwrap();
    assert_eq!(row3, "m,3,3,32,16,50");
}

#[test]
fn curve_files_round_trip_and_reject_bad_input() {
    let c = curve(&[(0, 0), (4, 1), (9, 1), (12, 2)]);
    let mut buf = Vec::new();
    write_curve_csv(&c, &mut buf).unwrap();
    assert_eq!(read_curve(buf.as_slice()).unwrap(), c);
    for bad in [
        "",
        "evaluations,found\n1,1\n",
        "evaluations,correct_found\n4,1\n3,2\n",
        "evaluations,correct_found\n4,2\n5,1\n",
        "evaluations,correct_found\nx,1\n",
        "evaluations,correct_found\n1,2,3\n",
        "evaluations,correct_found\n-1,0\n",
    ] {
        assert!(read_curve(bad.as_bytes()).is_err(), "{bad:?}");
    }
}
