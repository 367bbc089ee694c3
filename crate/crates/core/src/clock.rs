/// Source of provenance timestamps. `Frozen` makes outputs byte-reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Frozen(String),
}

impl Clock {
    /// RFC 3339 UTC timestamp with second precision.
    pub fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Frozen(ts) => ts.clone(),
        }
    }
}
