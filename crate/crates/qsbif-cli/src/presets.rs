//! Named configurations that reproduce the figure data.

pub const PRESETS: [(&str, &str); 8] = [
    ("fig3a", include_str!("../presets/fig3a.conf")),
    ("fig3b", include_str!("../presets/fig3b.conf")),
    ("fig4", include_str!("../presets/fig4.conf")),
    ("fig5-regions", include_str!("../presets/fig5-regions.conf")),
    ("fig5-sweeps", include_str!("../presets/fig5-sweeps.conf")),
    ("fig6", include_str!("../presets/fig6.conf")),
    ("fig7-topology", include_str!("../presets/fig7-topology.conf")),
    ("fig8-topology", include_str!("../presets/fig8-topology.conf")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn every_preset_parses() {
        for (name, text) in PRESETS {
            parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
