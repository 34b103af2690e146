//! Named experiment presets, stored as TOML fragments that user configs are
//! merged over.

/// Shared desk-scale base: a phased-class stream with two active classes
/// whose window slides every 2 steps, so each class returns every 20 steps.
const DESK_BASE: &str = r#"
mode = "realtime"
complexity = "measured"
buffer_capacity = 100
holdout_fraction = 0.01
hidden = [32]

[stream]
steps = 10000
batch_size = 10
feature_dim = 16
classes = 10

[stream.source.synthetic]
mode = "phased-classes"
sigma_drift = 0.0
sigma_noise = 1.5
active_classes = 2
phase_length = 2

[learner]
method = "er"
"#;

/// `(name, fragment layered over DESK_BASE, description)`.
const PRESETS: &[(&str, &str, &str)] = &[
    ("fast-stream", "", "real-time evaluation, delays from measured training cost"),
    (
        "slow-stream",
        r#"mode = "slowstream""#,
        "every batch trained to completion before the next arrives",
    ),
    (
        "faster-2x",
        r#"stream_speed_multiplier = "2""#,
        "real-time evaluation with the stream running twice as fast",
    ),
    (
        "two-gd-steps",
        "[learner]\ngd_steps_per_job = \"2\"",
        "real-time evaluation with two gradient steps per job",
    ),
    ("small-scale", "[stream]\nsteps = 5000", "short stream for quick checks"),
    (
        "large-scale",
        "buffer_capacity = 40000\nhidden = [256]\n[stream]\nsteps = 40000\nbatch_size = 128\nfeature_dim = 64\nclasses = 100\n[stream.source.synthetic]\nactive_classes = 20\nphase_length = 20",
        "batch of 128 and a 4e4-sample buffer, for larger machines",
    ),
];

pub fn names() -> impl Iterator<Item = (&'static str, &'static str)> {
    PRESETS.iter().map(|(n, _, d)| (*n, *d))
}

/// The preset as a TOML table, or `None` for an unknown name.
pub fn preset_table(name: &str) -> Option<toml::Table> {
    let (_, fragment, _) = PRESETS.iter().find(|(n, _, _)| *n == name)?;
    let mut base: toml::Table = DESK_BASE.parse().expect("valid base preset");
    let overlay: toml::Table = fragment.parse().expect("valid preset fragment");
    super::config::merge_tables(&mut base, overlay);
    Some(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in names() {
            assert!(preset_table(name).is_some(), "{name}");
        }
        assert!(preset_table("nope").is_none());
    }

    #[test]
    fn overlay_keeps_base_keys() {
        let t = preset_table("small-scale").unwrap();
        let stream = t["stream"].as_table().unwrap();
        assert_eq!(stream["steps"].as_integer(), Some(5000));
        assert_eq!(stream["batch_size"].as_integer(), Some(10));
    }
}
