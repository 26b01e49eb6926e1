//! Live mode: line-delimited JSON over TCP in, alert JSON lines out.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use aiswatch_core::ingest::parse_record;
use aiswatch_core::stream::{GroupOutput, GroupRunner, OperatorGroup, OperatorSettings, PartitionedLog, RunUntil};
use anyhow::{anyhow, Context};

use crate::commands::load_for_detection;
use crate::config::Config;
use crate::CliError;

/// How long shutdown waits for connected clients to finish sending.
const DRAIN_GRACE: Duration = Duration::from_secs(3);

#[derive(Default)]
struct Counters {
    received: AtomicU64,
    malformed: AtomicU64,
    connections: AtomicUsize,
}

/// `host:port` goes to TCP, anything else is a file path opened for append.
fn open_sink(target: Option<&str>) -> Result<Box<dyn Write + Send>, CliError> {
    let Some(t) = target else {
        return Ok(Box::new(std::io::stdout()));
    };
    let looks_like_addr = !t.contains('/')
        && t.rsplit_once(':')
            .is_some_and(|(h, p)| !h.is_empty() && !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
    if looks_like_addr {
        let addr = t
            .to_socket_addrs()
            .with_context(|| format!("resolving alert sink {t}"))?
            .next()
            .ok_or_else(|| anyhow!("alert sink {t} resolves to nothing"))?;
        let s = TcpStream::connect(addr).with_context(|| format!("connecting to alert sink {t}"))?;
        return Ok(Box::new(s));
    }
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(t)
        .with_context(|| format!("opening alert sink {t}"))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn handle_client(stream: TcpStream, log: &PartitionedLog, counters: &Counters) {
    let peer = stream.peer_addr().map_or_else(|_| "?".to_string(), |a| a.to_string());
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    let mut line_no = 0u64;
    loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => {
                eprintln!("{peer}: read error: {e}");
                break;
            }
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(m) => {
                if log.publish(m.mmsi, &m).is_err() {
                    // log closed: shutting down
                    break;
                }
                counters.received.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => {
                counters.malformed.fetch_add(1, Ordering::Relaxed);
                eprintln!("{peer}: line {line_no} skipped: {e}");
            }
        }
    }
}

pub fn serve(cfg: &Config, stdin_shutdown: bool) -> Result<(), CliError> {
    let (model, pre, rule) = load_for_detection(cfg)?;
    let listener = TcpListener::bind(&cfg.paths.listen).map_err(|source| CliError::Bind {
        addr: cfg.paths.listen.clone(),
        source,
    })?;
    let local = listener.local_addr().context("listen address")?;
    let mut sink = open_sink(cfg.paths.alerts.as_deref())?;

    let n = cfg.stream.n_partitions;
    let log = Arc::new(match &cfg.paths.log_dir {
        Some(dir) => {
            PartitionedLog::create_dir(dir, n).with_context(|| format!("creating log in {}", dir.display()))?
        }
        None => PartitionedLog::in_memory(n),
    });
    let group = OperatorGroup::new(n, cfg.stream.replicas).map_err(|e| CliError::Config(e.to_string()))?;
    let mut settings = OperatorSettings::new(pre, rule);
    settings.checkpoint_interval = cfg.stream.checkpoint_interval;
    settings.event_time_flush = true;
    let (out_tx, out_rx) = crossbeam_channel::unbounded();
    let mut runner = GroupRunner::new(Arc::clone(&log), group, settings, Arc::new(model), out_tx)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let (stop_tx, stop_rx) = mpsc::channel::<&'static str>();
    {
        let t = stop_tx.clone();
        ctrlc::set_handler(move || {
            let _ = t.send("signal");
        })
        .context("installing signal handler")?;
    }
    if stdin_shutdown {
        let t = stop_tx.clone();
        thread::spawn(move || {
            let _ = std::io::copy(&mut std::io::stdin().lock(), &mut std::io::sink());
            let _ = t.send("end of stdin");
        });
    }

    let counters = Arc::new(Counters::default());
    {
        let log = Arc::clone(&log);
        let counters = Arc::clone(&counters);
        thread::spawn(move || {
            for conn in listener.incoming() {
                match conn {
                    Ok(s) => {
                        let log = Arc::clone(&log);
                        let counters = Arc::clone(&counters);
                        counters.connections.fetch_add(1, Ordering::SeqCst);
                        thread::spawn(move || {
                            handle_client(s, &log, &counters);
                            counters.connections.fetch_sub(1, Ordering::SeqCst);
                        });
                    }
                    Err(e) => eprintln!("accept failed: {e}"),
                }
            }
        });
    }

    let writer = thread::spawn(move || -> std::io::Result<(u64, u64)> {
        let (mut alerts, mut closed) = (0, 0);
        for out in out_rx {
            match out {
                GroupOutput::Alert(a) => {
                    writeln!(sink, "{}", serde_json::to_string(&a).expect("alert serializes"))?;
                    sink.flush()?;
                    alerts += 1;
                }
                GroupOutput::Closed(_) => closed += 1,
            }
        }
        Ok((alerts, closed))
    });

    let group_thread = {
        let t = stop_tx;
        thread::spawn(move || {
            let r = runner.run(RunUntil::Drained).and_then(|()| {
                let open = runner.active_tracks();
                runner.finish()?;
                Ok((open, runner.stats()))
            });
            let _ = t.send("operator group stopped");
            r
        })
    };

    eprintln!("listening on {local}");
    let why = stop_rx.recv().unwrap_or("shutdown");
    eprintln!("shutting down ({why})");
    let deadline = Instant::now() + DRAIN_GRACE;
    while counters.connections.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(10));
    }
    log.close().context("closing log")?;
    let (flushed, stats) = group_thread
        .join()
        .map_err(|_| anyhow!("operator group panicked"))?
        .context("operator group")?;
    let (alerts, closed) = writer
        .join()
        .map_err(|_| anyhow!("alert writer panicked"))?
        .context("writing alerts")?;
    let summary = serde_json::json!({
        "received": counters.received.load(Ordering::Relaxed),
        "malformed": counters.malformed.load(Ordering::Relaxed),
        "processed": stats.records_processed,
        "alerts": alerts,
        "closed_tracks": closed,
        "flushed_at_shutdown": flushed,
        "built": stats.counts.built,
        "rejected": stats.counts.rejected,
        "tested": stats.counts.tested,
    });
    eprintln!("{summary}");
    Ok(())
}
