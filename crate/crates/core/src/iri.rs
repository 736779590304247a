//! Absolute IRI checks shared by question loading, query templating and the
//! SPARQL results parser.

/// Characters SPARQL forbids inside `<...>` IRI references, besides controls
/// and space.
const FORBIDDEN: &[char] = &['<', '>', '"', '{', '}', '|', '^', '`', '\\'];

/// `scheme ":" rest` with a well-formed scheme, a non-empty rest, and no
/// character that would be illegal in a SPARQL `IRIREF`.
pub fn is_absolute_iri(s: &str) -> bool {
    let Some((scheme, rest)) = s.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let scheme_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    scheme_ok
        && !rest.is_empty()
        && !s.chars().any(|c| c <= ' ' || FORBIDDEN.contains(&c))
}
