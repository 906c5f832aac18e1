pub mod config;
pub mod output;
pub mod run;
pub mod verify;

use z2sim::Error;

/// Process exit status for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<config::UsageError>().is_some() {
        return 2;
    }
    let core = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(|e| match e {
            Error::Aborted { source, .. } => source.as_ref(),
            other => other,
        });
    match core {
        Some(Error::Capacity { .. }) => 3,
        Some(Error::Checkpoint(_)) => 4,
        Some(
            Error::InvalidSchedule(_)
            | Error::InvalidInput(_)
            | Error::UnsupportedLattice(_)
            | Error::InvalidGeometry(_),
        ) => 2,
        _ => 1,
    }
}
