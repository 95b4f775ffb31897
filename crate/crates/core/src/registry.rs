//! Name-keyed registry of interchangeable strategies.
//!
//! Each family of algorithms (interpolators, slice policies, segmenters,
//! report formats) exposes a trait; concrete variants are registered under a
//! stable name and constructed at runtime from configuration.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unknown {family} '{name}' (available: {available})")]
    Unknown {
        family: &'static str,
        name: String,
        available: String,
    },
    #[error("invalid argument for {family} '{name}': {reason}")]
    BadArgument {
        family: &'static str,
        name: String,
        reason: String,
    },
}

type Factory<T, C> = Box<dyn Fn(&C, Option<&str>) -> Result<Box<T>, RegistryError> + Send + Sync>;

/// A registry of strategy constructors for one trait family.
///
/// `C` is the construction context shared by every variant (for example the
/// segmentation parameters). Names may carry an inline argument written as
/// `name=arg`, which is passed to the factory.
pub struct Registry<T: ?Sized, C = ()> {
    family: &'static str,
    factories: BTreeMap<String, Factory<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            factories: BTreeMap::new(),
        }
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    /// Registers (or replaces) a constructor under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&C, Option<&str>) -> Result<Box<T>, RegistryError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        let (base, _) = split_spec(name);
        self.factories.contains_key(base)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    /// Builds the strategy named by `spec` (`name` or `name=arg`).
    pub fn build(&self, spec: &str, ctx: &C) -> Result<Box<T>, RegistryError> {
        let (base, arg) = split_spec(spec);
        match self.factories.get(base) {
            Some(factory) => factory(ctx, arg),
            None => Err(RegistryError::Unknown {
                family: self.family,
                name: base.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

impl<T: ?Sized, C> fmt::Debug for Registry<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names())
            .finish()
    }
}

fn split_spec(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once('=') {
        Some((name, arg)) => (name.trim(), Some(arg.trim())),
        None => (spec.trim(), None),
    }
}

/// Error for a malformed inline argument.
pub fn bad_argument(family: &'static str, name: &str, reason: &str) -> RegistryError {
    RegistryError::BadArgument {
        family,
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

/// Rejects an inline argument for strategies that take none.
pub fn no_argument(
    family: &'static str,
    name: &str,
    arg: Option<&str>,
) -> Result<(), RegistryError> {
    match arg {
        None => Ok(()),
        Some(a) => Err(RegistryError::BadArgument {
            family,
            name: name.to_string(),
            reason: format!("takes no argument, got '{a}'"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }

    struct Fixed(String);

    impl Greeter for Fixed {
        fn greet(&self) -> String {
            self.0.clone()
        }
    }

    fn registry() -> Registry<dyn Greeter, String> {
        let mut r: Registry<dyn Greeter, String> = Registry::new("greeter");
        r.register("plain", |ctx, arg| {
            no_argument("greeter", "plain", arg)?;
            Ok(Box::new(Fixed(ctx.clone())))
        });
        r.register("echo", |_, arg| {
            Ok(Box::new(Fixed(arg.unwrap_or("").to_string())))
        });
        r
    }

    #[test]
    fn builds_by_name_with_argument() {
        let r = registry();
        assert_eq!(r.build("plain", &"hi".into()).unwrap().greet(), "hi");
        assert_eq!(r.build("echo=yo", &String::new()).unwrap().greet(), "yo");
        assert!(r.contains("echo=x"));
        assert_eq!(r.names(), vec!["echo", "plain"]);
    }

    #[test]
    fn unknown_name_lists_available() {
        let err = registry().build("nope", &String::new()).err().unwrap();
        assert_eq!(
            err.to_string(),
            "unknown greeter 'nope' (available: echo, plain)"
        );
    }

    #[test]
    fn rejects_unexpected_argument() {
        assert!(matches!(
            registry().build("plain=1", &String::new()),
            Err(RegistryError::BadArgument { .. })
        ));
    }
}
