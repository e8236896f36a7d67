//! Flat `key = value` config files. `#` starts a comment; an optional
//! `preset = sst|ag` line picks the base values that other keys override.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::model::{ClassifierDepth, Variant};
use crate::training::TrainConfig;

use super::CliError;

fn opt_usize(v: &Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Every key, in the order `format_config` writes them.
pub const KEYS: [&str; 19] = [
    "views",
    "view_dim",
    "attention_dim",
    "hidden_dim",
    "embed_dim",
    "dropout",
    "lr_scale",
    "rho",
    "epsilon",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "variant",
    "conv_features",
    "classifier",
    "min_count",
    "classes",
    "max_malformed_fraction",
];

/// Writes every field; `parse_config` of the result gives back `config`.
/// Floats use Rust's shortest round-trip formatting.
pub fn format_config(config: &TrainConfig) -> String {
    let c = config;
    let values = [
        c.views.to_string(),
        c.view_dim.to_string(),
        opt_usize(&c.attention_dim),
        opt_usize(&c.hidden_dim),
        c.embed_dim.to_string(),
        format!("{:?}", c.dropout),
        format!("{:?}", c.lr_scale),
        format!("{:?}", c.rho),
        format!("{:?}", c.epsilon),
        c.batch_size.to_string(),
        c.max_epochs.to_string(),
        c.patience.to_string(),
        c.seed.to_string(),
        c.variant.to_string(),
        on_off(c.conv_features).to_string(),
        c.classifier.to_string(),
        c.min_count.to_string(),
        opt_usize(&c.classes),
        format!("{:?}", c.max_malformed_fraction),
    ];
    KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_switch(value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got {value:?}")),
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{value:?}: {e}"))
}

fn parse_auto(value: &str) -> Result<Option<usize>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn set(config: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    let c = config;
    match key {
        "views" => c.views = parse(value)?,
        "view_dim" => c.view_dim = parse(value)?,
        "attention_dim" => c.attention_dim = parse_auto(value)?,
        "hidden_dim" => c.hidden_dim = parse_auto(value)?,
        "embed_dim" => c.embed_dim = parse(value)?,
        "dropout" => c.dropout = parse(value)?,
        "lr_scale" => c.lr_scale = parse(value)?,
        "rho" => c.rho = parse(value)?,
        "epsilon" => c.epsilon = parse(value)?,
        "batch_size" => c.batch_size = parse(value)?,
        "max_epochs" => c.max_epochs = parse(value)?,
        "patience" => c.patience = parse(value)?,
        "seed" => c.seed = parse(value)?,
        "variant" => c.variant = parse::<Variant>(value)?,
        "conv_features" => c.conv_features = parse_switch(value)?,
        "classifier" => c.classifier = parse::<ClassifierDepth>(value)?,
        "min_count" => c.min_count = parse(value)?,
        "classes" => c.classes = parse_auto(value)?,
        "max_malformed_fraction" => c.max_malformed_fraction = parse(value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Parses config text. `source` names the input in error messages.
pub fn parse_config(text: &str, source: &str) -> Result<TrainConfig, CliError> {
    let err = |line: usize, msg: String| CliError::Config {
        file: source.to_string(),
        line,
        msg,
    };
    let mut entries: Vec<(usize, &str, &str)> = Vec::new();
    let mut preset = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, "expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        if entries.iter().any(|(_, k, _)| *k == key) || (key == "preset" && preset.is_some()) {
            return Err(err(i + 1, format!("duplicate key {key:?}")));
        }
        if key == "preset" {
            preset = Some((i + 1, value));
        } else {
            entries.push((i + 1, key, value));
        }
    }
    let mut config = match preset {
        Some((line, name)) => TrainConfig::preset(name).ok_or_else(|| err(line, format!("unknown preset {name:?}")))?,
        None => TrainConfig::sst(),
    };
    for (line, key, value) in entries {
        set(&mut config, key, value).map_err(|msg| err(line, msg))?;
    }
    config.validate()?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_and_overrides() {
        let c = parse_config("preset = ag\n# comment\nviews = 4  # trailing\nvariant = no-links\n", "t").unwrap();
        assert_eq!((c.batch_size, c.view_dim, c.views), (23, 100, 4));
        assert_eq!(c.variant, Variant::NoLinks);
        assert_eq!(parse_config("", "t").unwrap(), TrainConfig::sst());
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("views = 2\nbogus = 1\n", 2),
            ("\n\nviews two\n", 3),
            ("views = 2\nviews = 3\n", 2),
            ("dropout = x\n", 1),
            ("preset = imdb\n", 1),
        ] {
            match parse_config(text, "cfg") {
                Err(CliError::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(parse_config("dropout = 1.5\n", "cfg").is_err());
    }

    #[test]
    fn presets_round_trip() {
        for c in [TrainConfig::sst(), TrainConfig::ag()] {
            assert_eq!(parse_config(&format_config(&c), "t").unwrap(), c);
        }
    }

    fn arb_config() -> impl Strategy<Value = TrainConfig> {
        (
            (1usize..12, 1usize..300, prop::option::of(1usize..50), prop::option::of(1usize..50)),
            (0.0f64..0.99, 0.0f64..2.0, 0.0f64..0.999, 1e-12f64..1e-2),
            (1usize..100, 1usize..100, 0usize..10, any::<u64>()),
            (0usize..3, any::<bool>(), any::<bool>(), prop::option::of(1usize..10), 0.0f64..=1.0),
        )
            .prop_map(|((v, d, a, h), (drop, lr, rho, eps), (bs, ep, pat, seed), (var, conv, single, cls, mal))| {
                TrainConfig {
                    views: v,
                    view_dim: d,
                    attention_dim: a,
                    hidden_dim: h,
                    embed_dim: d + 1,
                    dropout: drop,
                    lr_scale: lr,
                    rho,
                    epsilon: eps,
                    batch_size: bs,
                    max_epochs: ep,
                    patience: pat,
                    seed,
                    variant: Variant::ALL[var],
                    conv_features: conv,
                    classifier: if single { ClassifierDepth::Single } else { ClassifierDepth::TwoLayer },
                    min_count: pat + 1,
                    classes: cls,
                    max_malformed_fraction: mal,
                }
            })
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(c in arb_config()) {
            let text = format_config(&c);
            let back = parse_config(&text, "t").unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(format_config(&back), text);
        }
    }
}
