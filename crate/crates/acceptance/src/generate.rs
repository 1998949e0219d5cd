use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const SUBJECTS: [&str; 6] = [
    "spiffe://ci/org/build",
    "spiffe://ci/org/deploy",
    "spiffe://ci/org/deploy/prod",
    "spiffe://ci/org/deployer",
    "spiffe://ci/team/a",
    "spiffe://partner/org/deploy",
];
const SUBJECT_PREFIXES: [&str; 5] = [
    "spiffe://ci/*",
    "spiffe://ci/org/*",
    "spiffe://ci/org/deploy/*",
    "spiffe://partner/*",
    "spiffe://ci/team/*",
];
pub const RESOURCES: [&str; 6] = [
    "s3://prod-release-artifacts",
    "s3://prod-release-artifacts-backup",
    "s3://staging-release-artifacts",
    "db://prod-orders",
    "db://dev-orders",
    "vault://kv/app",
];
const RESOURCE_PREFIXES: [&str; 5] = ["s3://*", "s3://prod-*", "db://*", "*", "db://prod-*"];
pub const ACTIONS: [&str; 4] = ["read", "write", "delete", "admin"];
const CLAIMS: [(&str, &[&str]); 2] = [
    ("env", &["dev", "staging", "prod"]),
    ("branch", &["main", "feature"]),
];

/// Reference instant around which time windows and request times are drawn.
pub const BASE_TIME: i64 = 1_767_225_600;
const SPREAD: i64 = 7_200;

/// One generated rule, kept as plain strings so the oracle never sees the
/// broker's parsed representation.
#[derive(Debug, Clone)]
pub struct GenRule {
    pub id: String,
    pub subject: String,
    pub resource: String,
    pub actions: Vec<String>,
    pub conditions: Vec<(String, String)>,
    pub not_before: Option<i64>,
    pub not_after: Option<i64>,
    pub approval_required: bool,
    pub max_ttl: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct GenContext {
    pub subject: String,
    pub claims: BTreeMap<String, String>,
    pub resource: String,
    pub action: String,
    pub now: i64,
}

pub struct Generator {
    rng: ChaCha20Rng,
}

fn rfc3339(unix: i64) -> String {
    let days = unix.div_euclid(86_400);
    let secs = unix.rem_euclid(86_400);
    // civil-from-days, proleptic Gregorian
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!(
        "{year:04}-{month:02}-{day:02}T{:02}:{:02}:{:02}Z",
        secs / 3600,
        secs / 60 % 60,
        secs % 60
    )
}

impl GenRule {
    pub fn to_toml(&self) -> String {
        let quoted = |items: &[String]| {
            items
                .iter()
                .map(|a| format!("{a:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = format!(
            "[[rules]]\nid = {:?}\nsubject = {:?}\nresource = {:?}\nactions = [{}]\n",
            self.id,
            self.subject,
            self.resource,
            quoted(&self.actions)
        );
        if self.approval_required {
            out.push_str("approval_required = true\n");
        }
        if let Some(ttl) = self.max_ttl {
            out.push_str(&format!("max_ttl_seconds = {ttl}\n"));
        }
        if let Some(t) = self.not_before {
            out.push_str(&format!("not_before = \"{}\"\n", rfc3339(t)));
        }
        if let Some(t) = self.not_after {
            out.push_str(&format!("not_after = \"{}\"\n", rfc3339(t)));
        }
        for (claim, equals) in &self.conditions {
            out.push_str(&format!(
                "[[rules.conditions]]\nclaim = {claim:?}\nequals = {equals:?}\n"
            ));
        }
        out
    }
}

pub fn render_document(rules: &[GenRule]) -> String {
    rules
        .iter()
        .map(GenRule::to_toml)
        .collect::<Vec<_>>()
        .join("\n")
}

impl Generator {
    pub fn new(seed: u64) -> Self {
        Generator {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items.choose(&mut self.rng).expect("non-empty pool")
    }

    pub fn rule(&mut self, id: String) -> GenRule {
        let subject = if self.rng.gen_bool(0.6) {
            self.pick(&SUBJECTS)
        } else {
            self.pick(&SUBJECT_PREFIXES)
        };
        let resource = if self.rng.gen_bool(0.6) {
            self.pick(&RESOURCES)
        } else {
            self.pick(&RESOURCE_PREFIXES)
        };
        let n_actions = self.rng.gen_range(1..=3);
        let mut actions: Vec<String> = ACTIONS
            .choose_multiple(&mut self.rng, n_actions)
            .map(|a| a.to_string())
            .collect();
        actions.sort();
        let mut conditions = Vec::new();
        for (claim, values) in CLAIMS {
            if self.rng.gen_bool(0.3) {
                conditions.push((claim.to_owned(), self.pick(values).to_owned()));
            }
        }
        let not_before = self
            .rng
            .gen_bool(0.2)
            .then(|| BASE_TIME + self.rng.gen_range(-SPREAD..SPREAD));
        let not_after = self.rng.gen_bool(0.2).then(|| {
            let from = not_before.unwrap_or(BASE_TIME - SPREAD) + 1;
            self.rng.gen_range(from..=BASE_TIME + SPREAD + 1)
        });
        GenRule {
            id,
            subject: subject.to_owned(),
            resource: resource.to_owned(),
            actions,
            conditions,
            not_before,
            not_after,
            approval_required: self.rng.gen_bool(0.25),
            max_ttl: self.rng.gen_bool(0.5).then(|| self.rng.gen_range(1..=900)),
        }
    }

    /// Up to `max_rules` rules with unique ids.
    pub fn document(&mut self, max_rules: usize) -> Vec<GenRule> {
        let n = self.rng.gen_range(0..=max_rules);
        (0..n).map(|i| self.rule(format!("rule-{i:02}"))).collect()
    }

    pub fn context(&mut self) -> GenContext {
        let mut claims = BTreeMap::new();
        for (claim, values) in CLAIMS {
            if self.rng.gen_bool(0.7) {
                claims.insert(claim.to_owned(), self.pick(values).to_owned());
            }
        }
        GenContext {
            subject: self.pick(&SUBJECTS).to_owned(),
            claims,
            resource: self.pick(&RESOURCES).to_owned(),
            action: self.pick(&ACTIONS).to_owned(),
            now: BASE_TIME + self.rng.gen_range(-SPREAD - 10..=SPREAD + 10),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}
