//! Secure-shell channel to RAN hosts: argument builders for `ssh` and `scp`.

use std::path::Path;

use super::compose::REMOTE_ROOT;
use super::EngineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SshTarget {
    pub user: Option<String>,
    pub host: String,
    pub port: Option<u16>,
}

impl SshTarget {
    /// Parses `[user@]host[:port]`.
    pub fn parse(location: &str) -> Result<Self, EngineError> {
        let bad = || EngineError::Invalid(format!("ssh target `{location}`"));
        let (user, rest) = match location.split_once('@') {
            Some((u, r)) if !u.is_empty() => (Some(u.to_string()), r),
            Some(_) => return Err(bad()),
            None => (None, location),
        };
        let (host, port) = match rest.rsplit_once(':') {
            Some((h, p)) => (h, Some(p.parse().map_err(|_| bad())?)),
            None => (rest, None),
        };
        if host.is_empty() || host.contains(char::is_whitespace) {
            return Err(bad());
        }
        Ok(Self {
            user,
            host: host.to_string(),
            port,
        })
    }

    pub fn destination(&self) -> String {
        match &self.user {
            Some(u) => format!("{u}@{}", self.host),
            None => self.host.clone(),
        }
    }
}

const COMMON: [&str; 4] = ["-o", "BatchMode=yes", "-o", "ConnectTimeout=10"];

/// Quotes `s` for a POSIX shell.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_./=:@,".contains(&b)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

pub fn remote_dir(stack: &str) -> String {
    format!("{REMOTE_ROOT}/{stack}")
}

pub fn ssh_args(target: &SshTarget, remote_command: &str) -> Vec<String> {
    let mut args: Vec<String> = COMMON.iter().map(|s| s.to_string()).collect();
    if let Some(p) = target.port {
        args.extend(["-p".into(), p.to_string()]);
    }
    args.push(target.destination());
    args.push(remote_command.to_string());
    args
}

pub fn scp_args(target: &SshTarget, local: &Path, remote_path: &str) -> Vec<String> {
    let mut args: Vec<String> = COMMON.iter().map(|s| s.to_string()).collect();
    if let Some(p) = target.port {
        args.extend(["-P".into(), p.to_string()]);
    }
    args.push(local.display().to_string());
    args.push(format!("{}:{}", target.destination(), remote_path));
    args
}

pub fn mkdir_command(dir: &str) -> String {
    format!("mkdir -p {}", shell_quote(dir))
}

pub fn fragment_path(stack: &str, fragment_id: &str) -> String {
    format!("{}/{fragment_id}.yaml", remote_dir(stack))
}

pub fn compose_up_command(stack: &str, fragment_id: &str) -> String {
    format!(
        "docker compose -p {} -f {} up -d",
        shell_quote(stack),
        shell_quote(&fragment_path(stack, fragment_id))
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets() {
        let t = SshTarget::parse("lab@10.0.0.11:2222").unwrap();
        assert_eq!(t.destination(), "lab@10.0.0.11");
        assert_eq!(t.port, Some(2222));
        assert_eq!(SshTarget::parse("ran-1").unwrap().destination(), "ran-1");
        assert!(SshTarget::parse("@x").is_err());
        assert!(SshTarget::parse("x:notaport").is_err());
    }

    #[test]
    fn commands() {
        let t = SshTarget::parse("lab@ran1:2222").unwrap();
        assert_eq!(
            ssh_args(&t, "true"),
            ["-o", "BatchMode=yes", "-o", "ConnectTimeout=10", "-p", "2222", "lab@ran1", "true"]
        );
        assert_eq!(
            scp_args(&t, Path::new("/tmp/a"), "/opt/cube/s/a"),
            ["-o", "BatchMode=yes", "-o", "ConnectTimeout=10", "-P", "2222", "/tmp/a", "lab@ran1:/opt/cube/s/a"]
        );
        assert_eq!(
            compose_up_command("lab", "lab-gnb-0123abcd"),
            "docker compose -p lab -f /opt/cube/lab/lab-gnb-0123abcd.yaml up -d"
        );
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
    }
}
