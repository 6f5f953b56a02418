//! Experiment presets shipped with the binary. The same files live in `presets/`.

const PRESETS: &[(&str, &str)] = &[
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    (
        "fig4a-single-contact",
        include_str!("../presets/fig4a-single-contact.toml"),
    ),
    ("fig4-three-contact", include_str!("../presets/fig4-three-contact.toml")),
    ("fig5a", include_str!("../presets/fig5a.toml")),
    ("fig5b", include_str!("../presets/fig5b.toml")),
    ("fig5c", include_str!("../presets/fig5c.toml")),
    ("fig6a", include_str!("../presets/fig6a.toml")),
    ("fig6b", include_str!("../presets/fig6b.toml")),
    ("fig6c", include_str!("../presets/fig6c.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use crate::config::ExperimentConfig;

    #[test]
    fn every_preset_resolves() {
        for name in super::names() {
            let exp = ExperimentConfig::load(name).and_then(|c| c.resolve());
            let exp = exp.unwrap_or_else(|e| panic!("{name}: {e:#}"));
            assert_eq!(exp.name, name);
        }
    }

    #[test]
    fn ablation_presets_have_three_points() {
        for name in ["fig5a", "fig5b", "fig5c", "fig6a", "fig6b", "fig6c"] {
            let exp = ExperimentConfig::load(name).unwrap().resolve().unwrap();
            assert_eq!(exp.ablation.unwrap().points.len(), 3, "{name}");
        }
    }
}
