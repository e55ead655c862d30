//! Component identities: services, their replica pods, and the nodes that host them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentLevel {
    Service,
    Pod,
    Node,
}

impl fmt::Display for ComponentLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComponentLevel::Service => "service",
            ComponentLevel::Pod => "pod",
            ComponentLevel::Node => "node",
        })
    }
}

/// A named component at one deployment level. Ordered by name first so that
/// "component name ascending" tie-breaks fall out of the derived `Ord`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentId {
    pub name: String,
    pub level: ComponentLevel,
}

impl ComponentId {
    pub fn service(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            level: ComponentLevel::Service,
        }
    }

    pub fn pod(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            level: ComponentLevel::Pod,
        }
    }

    pub fn node(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            level: ComponentLevel::Node,
        }
    }

    /// The owning service of a pod; `None` for other levels.
    pub fn parent_service(&self) -> Option<ComponentId> {
        match self.level {
            ComponentLevel::Pod => Some(ComponentId::service(derive_service(&self.name))),
            _ => None,
        }
    }
}

/// Serde adapter for `BTreeMap<ComponentId, V>`: JSON object keys must be
/// strings, so the map travels as a list of `[component, value]` pairs.
pub mod keyed {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ComponentId;

    pub fn serialize<S: Serializer, V: Serialize>(map: &BTreeMap<ComponentId, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
        d: D,
    ) -> Result<BTreeMap<ComponentId, V>, D::Error> {
        Ok(Vec::<(ComponentId, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.level)
    }
}

/// Strips a trailing `-<digits>` ordinal: `redis-cart-0` becomes `redis-cart`.
/// Names without an ordinal are returned unchanged.
pub fn derive_service(name: &str) -> &str {
    match split_ordinal(name) {
        Some((service, _)) => service,
        None => name,
    }
}

fn split_ordinal(name: &str) -> Option<(&str, &str)> {
    let (prefix, ordinal) = name.rsplit_once('-')?;
    if prefix.is_empty() || ordinal.is_empty() || !ordinal.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((prefix, ordinal))
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Classifies a raw component name. Known node names win; `<service>-<n>`
/// is a pod; any other identifier is a service. Names that are not plain
/// identifiers (empty, whitespace, punctuation) do not resolve.
pub fn resolve_component(name: &str, known_nodes: &BTreeSet<String>) -> Option<ComponentId> {
    let name = name.trim();
    if !is_identifier(name) {
        return None;
    }
    if known_nodes.contains(name) {
        return Some(ComponentId::node(name));
    }
    if split_ordinal(name).is_some() {
        Some(ComponentId::pod(name))
    } else {
        Some(ComponentId::service(name))
    }
}

/// Which pods belong to which services and nodes, as observed in telemetry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub service_pods: BTreeMap<String, BTreeSet<String>>,
    pub node_pods: BTreeMap<String, BTreeSet<String>>,
}

impl Topology {
    pub fn add_pod(&mut self, pod: &str, node: Option<&str>) {
        self.service_pods
            .entry(derive_service(pod).to_string())
            .or_default()
            .insert(pod.to_string());
        if let Some(node) = node.filter(|n| !n.is_empty()) {
            self.node_pods
                .entry(node.to_string())
                .or_default()
                .insert(pod.to_string());
        }
    }

    /// Pods covered by a service or node component; empty for pods.
    pub fn members(&self, component: &ComponentId) -> Vec<String> {
        let set = match component.level {
            ComponentLevel::Service => self.service_pods.get(&component.name),
            ComponentLevel::Node => self.node_pods.get(&component.name),
            ComponentLevel::Pod => None,
        };
        set.map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn merge(&mut self, other: &Topology) {
        for (svc, pods) in &other.service_pods {
            self.service_pods
                .entry(svc.clone())
                .or_default()
                .extend(pods.iter().cloned());
        }
        for (node, pods) in &other.node_pods {
            self.node_pods
                .entry(node.clone())
                .or_default()
                .extend(pods.iter().cloned());
        }
    }
}
