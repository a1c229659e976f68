//! CSV and report writers. Every float goes through [`fmt_f64`] so the
//! files parse back to the in-memory values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use stalr_core::analysis::ReachingReport;
use stalr_core::dde::SimResult;
use stalr_core::fmt_f64;

fn indexed(name: &str, count: usize) -> Vec<String> {
    if count == 1 {
        vec![name.to_owned()]
    } else {
        (1..=count).map(|i| format!("{name}{i}")).collect()
    }
}

/// `t,x1..xn,w,u_nom,v,u_total,rho,V,Vst`; input-sized columns get an index
/// suffix when `k > 1`.
pub fn trajectory_header(n: usize, k: usize) -> String {
    let mut cols = vec!["t".to_owned()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    for name in ["w", "u_nom", "v", "u_total", "rho"] {
        cols.extend(indexed(name, k));
    }
    cols.push("V".into());
    cols.push("Vst".into());
    cols.join(",")
}

pub fn trajectory_csv(run: &SimResult) -> String {
    let n = run.x.first().map_or(0, |x| x.len());
    let k = run.w.first().map_or(0, |w| w.len());
    let mut out = trajectory_header(n, k);
    out.push('\n');
    let mut fields: Vec<String> = Vec::with_capacity(n + 5 * k + 3);
    for i in 0..run.len() {
        fields.clear();
        fields.push(fmt_f64(run.t[i]));
        for series in [&run.x, &run.w, &run.u_nom, &run.v, &run.u_total, &run.rho] {
            fields.extend(series[i].iter().map(|v| fmt_f64(*v)));
        }
        fields.push(fmt_f64(run.lkf[i]));
        fields.push(run.vst.as_ref().map_or_else(|| "nan".to_owned(), |v| fmt_f64(v[i])));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_owned(), fmt_f64)
}

pub fn report_text(run: &SimResult) -> String {
    let m = &run.metadata;
    let d = &run.diagnostics;
    let mut s = String::new();
    let _ = writeln!(s, "controller={}", m.controller);
    let _ = writeln!(s, "uncertainty={}", m.uncertainty);
    let _ = writeln!(s, "scheme={}", m.scheme.name());
    let _ = writeln!(s, "step={}", fmt_f64(m.step));
    let _ = writeln!(s, "t_final={}", fmt_f64(m.t_final));
    let _ = writeln!(s, "phi={}", m.phi);
    let _ = writeln!(s, "phi_backward_extension={}", if m.backward_extension { "constant" } else { "none" });
    let _ = writeln!(s, "seed={}", m.seed);
    let _ = writeln!(s, "samples={}", run.len());
    append_diagnostics(&mut s, d);
    let final_norm = run.x.last().map_or(0.0, |x| x.norm());
    let _ = writeln!(s, "final_state_norm={}", fmt_f64(final_norm));
    s
}

fn append_diagnostics(s: &mut String, d: &ReachingReport) {
    let _ = writeln!(s, "reach_tol={}", fmt_f64(d.tol));
    let _ = writeln!(s, "reach_window={}", fmt_f64(d.window));
    let _ = writeln!(s, "t_reach={}", opt(d.t_reach));
    let _ = writeln!(s, "residual_radius={}", fmt_f64(d.residual_radius));
    let _ = writeln!(s, "total_variation={}", fmt_f64(d.control_total_variation));
    let _ = writeln!(s, "max_control={}", fmt_f64(d.max_control));
}

pub const SUMMARY_HEADER: &str = "controller,t_reach,residual_radius,total_variation,max_control";

pub fn summary_row(controller: &str, d: &ReachingReport) -> String {
    format!(
        "{controller},{},{},{},{}",
        opt(d.t_reach),
        fmt_f64(d.residual_radius),
        fmt_f64(d.control_total_variation),
        fmt_f64(d.max_control)
    )
}

/// Plots `‖x‖` and the total control of every compared run.
pub fn gnuplot_script(controllers: &[String], n: usize, k: usize) -> String {
    let norm: Vec<String> = (1..=n).map(|i| format!("column({})**2", i + 1)).collect();
    let norm = format!("sqrt({})", norm.join("+"));
    let u_col = 2 + n + 3 * k;
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    s.push_str("set terminal pngcairo size 1000,700\n");
    s.push_str("set output 'state_norm.png'\nset logscale y\nset ylabel '|x|'\nplot ");
    let lines: Vec<String> = controllers
        .iter()
        .map(|c| format!("'{c}/trajectory.csv' using 1:({norm}) with lines title '{c}'"))
        .collect();
    s.push_str(&lines.join(", \\\n     "));
    s.push_str("\nunset logscale y\nset output 'control.png'\nset ylabel 'u'\nplot ");
    let lines: Vec<String> = controllers
        .iter()
        .map(|c| format!("'{c}/trajectory.csv' using 1:{u_col} with lines title '{c}'"))
        .collect();
    s.push_str(&lines.join(", \\\n     "));
    s.push('\n');
    s
}

pub fn write(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)
}
