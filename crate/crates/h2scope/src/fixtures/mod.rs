//! Hermetic local servers used by the test suite and the `h2scope fixtures`
//! subcommand.

pub mod cleartext;
pub mod page;
pub mod shim;
pub mod tls;

pub use cleartext::{CleartextBehavior, CleartextFixture};
pub use page::{DomainContent, PageFixture};
pub use shim::{NetShim, ShimConfig};
pub use tls::{CannedResponse, TlsFixture};
