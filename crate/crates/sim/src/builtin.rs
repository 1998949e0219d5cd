use crate::scenario::{Model, Scenario, ScenarioError};

const FILES: [(Model, &str); 5] = [
    (
        Model::InlineInjection,
        include_str!("../scenarios/inline_injection.toml"),
    ),
    (
        Model::StaticRoleMapping,
        include_str!("../scenarios/static_role_mapping.toml"),
    ),
    (
        Model::GlobalSecretsMount,
        include_str!("../scenarios/global_secrets_mount.toml"),
    ),
    (
        Model::CrossEnvReuse,
        include_str!("../scenarios/cross_env_reuse.toml"),
    ),
    (Model::Brokered, include_str!("../scenarios/brokered.toml")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|(m, _)| m.as_str())
}

/// Source text of a bundled scenario.
pub fn builtin_text(name: &str) -> Option<&'static str> {
    FILES
        .iter()
        .find(|(m, _)| m.as_str() == name)
        .map(|(_, text)| *text)
}

pub fn builtin(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    builtin_text(name).map(|text| Scenario::from_toml(text, None))
}

/// All five bundled scenarios, in report order.
pub fn all_builtin() -> Vec<Scenario> {
    FILES
        .iter()
        .map(|(_, text)| Scenario::from_toml(text, None).expect("bundled scenarios are valid"))
        .collect()
}
