//! Component graphs for reinforcement learning: composition, dimension-less
//! assembly, staged or define-by-run compilation, and execution.
//!
//! A model is put together in three phases. Composition nests components
//! and registers API methods and graph functions. Assembly calls every root
//! API method once with abstract op records, producing the
//! backend-independent [`meta::ComponentGraph`]. The build propagates
//! spaces breadth-first, creates variables at input-completeness, and
//! materializes kernels for one of two backends; a [`exec::GraphExecutor`]
//! then serves API calls against the result.

pub mod build;
pub mod component;
pub mod dot;
pub mod error;
pub mod exec;
pub mod harness;
pub mod kernel;
pub mod meta;

pub use build::{
    build, build_with, space_compatible, ApiRuntime, BackendMode, BuildEvent, BuildLedger,
    BuildOptions, BuildStats, DbrStep, DeviceMap, OpRegistry, VarCtx,
};
pub use component::{ApiBody, ApiMethod, ApiParam, Component, GraphFn, Kernel, VarBuilder};
pub use dot::export_dot;
pub use error::{GraphError, GraphResult};
pub use exec::GraphExecutor;
pub use harness::ComponentTest;
pub use kernel::{KernelArg, KernelCtx, KernelOut, NodeId, NodeOp, StagedNode, TRef, VarSlot, VarStore};
pub use meta::{build_meta_graph, ApiCtx, CallSite, ComponentGraph, OpRecord, Rec, RecordOrigin, SiteId, SiteKind};
