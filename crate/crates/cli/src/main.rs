use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use porosim::session::{
    export, load_scene, run_replay, serve, ReplayOptions, ServeConfig, SessionError, ToolPathScript,
};

#[derive(Parser)]
#[command(
    name = "porosim",
    version,
    about = "Porous deformable solids: replay, serve, validate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tool-path script headlessly and write logs and exports.
    Replay {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seconds to simulate; defaults to the last keyframe time.
        #[arg(long)]
        duration: Option<f64>,
        /// Write one JSON line of contacts per step to contacts.jsonl.
        #[arg(long)]
        debug_contacts: bool,
    },
    /// Stream the live session over WebSocket.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 60.0)]
        snapshot_rate: f64,
        /// Run the haptic thread under SCHED_FIFO at this priority (Linux).
        #[arg(long)]
        realtime_priority: Option<i32>,
    },
    /// Load a scene and report what it contains.
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
}

fn exit_code(e: &SessionError) -> ExitCode {
    if e.is_validation() {
        ExitCode::from(2)
    } else if matches!(e, SessionError::Solver { .. } | SessionError::Wetting { .. }) {
        ExitCode::from(3)
    } else {
        ExitCode::from(1)
    }
}

fn replay(
    scene: &Path,
    script: &Path,
    out: &Path,
    duration: Option<f64>,
    debug_contacts: bool,
) -> Result<(), SessionError> {
    let mut session = load_scene(scene)?;
    let script = ToolPathScript::from_path(script)?;
    let options = ReplayOptions {
        duration,
        debug_contacts,
        ..Default::default()
    };
    let output = run_replay(&mut session, &script, &options)?;
    output.write(out)?;
    export(&session, &output.force_rows, out)?;
    let s = &output.summary;
    println!(
        "{} steps ({:.3} s simulated) on {} tets in {:.2} s wall, mean step {:.2} ms, peak force {:.4e} N, peak indentation {:.4e} m",
        s.steps, s.simulated_time_s, s.tet_count, s.wall_time_s, s.mean_step_ms, s.peak_force, s.peak_indentation
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_serve(scene: &Path, port: u16, snapshot_rate: f64, realtime_priority: Option<i32>) -> Result<(), SessionError> {
    if snapshot_rate.is_nan() || snapshot_rate <= 0.0 {
        return Err(SessionError::Invalid {
            field: "snapshot_rate".into(),
            message: format!("{snapshot_rate} must be positive"),
        });
    }
    let session = load_scene(scene)?;
    let config = ServeConfig {
        snapshot_rate_hz: snapshot_rate,
        haptic_priority: realtime_priority,
        ..Default::default()
    };
    let handle = serve(session, ("0.0.0.0", port), config)?;
    println!("serving on ws://{}", handle.local_addr());
    while !handle.is_finished() {
        std::thread::sleep(Duration::from_millis(100));
    }
    let (_, report) = handle.stop();
    report.error.map_or(Ok(()), Err)
}

fn validate(scene: &Path) -> Result<(), SessionError> {
    let s = load_scene(scene)?;
    println!(
        "ok: {} vertices, {} tets, {} boundary faces, {} pinned; surface {} vertices / {} triangles ({} outside the cage, worst weight {:.3e}); proxy {} vertices",
        s.body.vertex_count(),
        s.body.mesh.tet_count(),
        s.body.mesh.boundary_faces.len(),
        s.body.params.fixed.len(),
        s.surface.vertices.len(),
        s.surface.triangles.len(),
        s.embedding_report.outside_count,
        s.embedding_report.max_negative_weight,
        s.proxy.rest_vertices.len(),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Replay {
            scene,
            script,
            out,
            duration,
            debug_contacts,
        } => replay(scene, script, out, *duration, *debug_contacts),
        Command::Serve {
            scene,
            port,
            snapshot_rate,
            realtime_priority,
        } => run_serve(scene, *port, *snapshot_rate, *realtime_priority),
        Command::Validate { scene } => validate(scene),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
