//! Reference element, quadrature, the broken space `V_h^k` and its norms.

pub mod basis;
pub mod quadrature;
pub mod space;

pub use basis::{dofs_per_element, ReferenceBasis};
pub use quadrature::{LineRule, TriangleRule};
pub use space::{ComplexField, DGSpace, ElementGeometry, Tabulation};
