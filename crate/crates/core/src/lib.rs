pub mod schema;
pub mod socgraph;
