use std::path::PathBuf;

use repalign_cli::plot::{LineChart, Series};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares against the checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn check(name: &str, svg: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, svg).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    assert_eq!(svg, want, "{name} differs from golden file");
}

fn sweep_chart(log_x: bool) -> LineChart {
    let xs = [0.01, 0.05, 0.1, 0.25, 1.0];
    LineChart {
        title: "Feature subset sweep".into(),
        x_label: "fraction of features".into(),
        y_label: "value".into(),
        log_x,
        series: vec![
            Series::new(
                "II x->y",
                xs.iter()
                    .zip([0.84, 0.55, 0.41, 0.19, 0.0008])
                    .map(|(&x, y)| (x, y))
                    .collect(),
            ),
            Series::new(
                "II y->x",
                xs.iter()
                    .zip([0.95, 0.76, 0.61, 0.32, 0.0008])
                    .map(|(&x, y)| (x, y))
                    .collect(),
            ),
            Series::new(
                "CKA",
                xs.iter()
                    .zip([0.1, 0.23, 0.32, 0.51, 1.0])
                    .map(|(&x, y)| (x, y))
                    .collect(),
            ),
        ],
    }
}

#[test]
fn linear_axis_chart_matches_golden() {
    check("subset_linear.svg", &sweep_chart(false).to_svg());
}

#[test]
fn log_axis_chart_matches_golden() {
    check("subset_log.svg", &sweep_chart(true).to_svg());
}

#[test]
fn chart_is_pure_function_of_data() {
    assert_eq!(sweep_chart(true).to_svg(), sweep_chart(true).to_svg());
    let mut other = sweep_chart(true);
    other.series[2].points[0].1 = 0.11;
    assert_ne!(other.to_svg(), sweep_chart(true).to_svg());
}

#[test]
fn labels_are_escaped_and_empty_chart_renders() {
    let chart = LineChart {
        title: "a < b & c".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        log_x: false,
        series: vec![],
    };
    let svg = chart.to_svg();
    assert!(svg.contains("a &lt; b &amp; c"));
    assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
}
