use std::fmt::Write;

use crate::harness::Trajectory;

pub const CSV_HEADER: &str = "trial,n,k_n,gap,w2l_to_ref,second_moment,running_R";

/// Shortest decimal that parses back to `x`, in scientific notation outside
/// `[1e-5, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else if x == 0.0 || (1e-5..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// One row per update of every trial, trials in order.
pub fn trajectory_csv(trajectories: &[Trajectory]) -> String {
    let mut out = String::with_capacity(64 * trajectories.iter().map(|t| t.records.len()).sum::<usize>());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (t, traj) in trajectories.iter().enumerate() {
        for r in traj.updates() {
            let k = r.k.expect("update records carry an index");
            let _ = writeln!(
                out,
                "{t},{},{k},{},{},{},{}",
                r.n,
                fmt_f64(r.gap),
                fmt_f64(r.w2l_to_ref),
                fmt_f64(r.second_moment),
                fmt_f64(r.running_r)
            );
        }
    }
    out
}
