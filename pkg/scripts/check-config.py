#!/usr/bin/env python3
"""
RARARL 配置验证脚本
验证 config/.env 和运行配置 (TOML) 是否正确

Usage:
    python scripts/check-config.py [config/speedway.toml]
"""

import os
import sys

# 添加项目根目录到 path
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_ROOT)


def check_config(run_config_path=None):
    """验证配置文件"""
    print("🔍 Checking RARARL configuration...\n")

    errors = []
    warnings = []

    # 环境变量 (.env 可选)
    print("📋 Environment:")
    env_path = os.path.join(PROJECT_ROOT, "config", ".env")
    if os.path.exists(env_path):
        from dotenv import load_dotenv
        load_dotenv(env_path)
        print("   ✅ config/.env loaded")
    else:
        print("   ℹ️  config/.env not found, using defaults (cp config/.env.example config/.env)")

    from src.utils.config import Settings
    try:
        settings = Settings(_env_file=None)
    except ValueError as e:
        errors.append(f"invalid RARARL_* variable: {e}")
        print("   ❌ RARARL_* variables: invalid")
        settings = None

    if settings is not None:
        seed = settings.seed if settings.seed is not None else "(from [run].seed)"
        print(f"   ℹ️  RARARL_SEED: {seed}")
        print(f"   ℹ️  RARARL_LOG_LEVEL: {settings.log_level}")
        print(f"   ℹ️  RARARL_OUTPUT_DIR: {settings.output_dir or '(from [run].output_dir)'}")
        run_config_path = run_config_path or settings.run_config

    # 运行配置
    run_config_path = run_config_path or "config/speedway.toml"
    print(f"\n📋 Run config ({run_config_path}):")
    from src.rararl.errors import ConfigError
    from src.rararl.trainer import make_variant
    from src.utils.config import config_digest, load_run_config

    cfg = None
    try:
        cfg = load_run_config(run_config_path)
    except ConfigError as e:
        errors.append(str(e).splitlines()[0])
        for line in e.diagnostics:
            print(f"   ❌ {line}")
        if not e.diagnostics:
            print(f"   ❌ {e}")

    if cfg is not None:
        train = cfg.training()
        protagonist, perturber = make_variant(train)
        print(f"   ✅ variant: {train.variant.value} (k={protagonist.k}, perturber={perturber.kind.value})")
        print(f"   ✅ steps: {train.total_steps}, schedule xi={train.schedule.xi} m={train.schedule.m} n={train.schedule.n}")
        print(f"   ✅ track: {len(cfg.track.segments)} segment(s), {cfg.track.track_length:.1f} m")
        print(f"   ℹ️  digest: {config_digest(cfg)[:12]}")

        if train.total_steps and train.learning_starts >= train.total_steps:
            warnings.append("learning_starts >= total_steps: no update will run")
        if perturber.kind.value != "none" and train.schedule.xi >= train.total_steps:
            warnings.append("schedule.xi >= total_steps: the perturber never acts")
        if train.buffer_capacity < train.batch_size:
            warnings.append("buffer_capacity < batch_size")

    # 输出目录 (RARARL_OUTPUT_DIR 优先于 [run].output_dir)
    print("\n📋 Directories:")
    output_dir = settings.output_dir if settings is not None else None
    if not output_dir:
        output_dir = cfg.run.output_dir if cfg is not None else "runs"
    if os.path.isdir(os.path.join(PROJECT_ROOT, output_dir)):
        print(f"   ✅ {output_dir}/")
    else:
        print(f"   ⚠️  {output_dir}/: missing (created on first run)")

    # 结果汇总
    print("\n" + "=" * 50)

    if errors:
        print(f"\n❌ {len(errors)} error(s):")
        for e in errors:
            print(f"   • {e}")
        return False

    if warnings:
        print(f"\n⚠️  {len(warnings)} warning(s):")
        for w in warnings:
            print(f"   • {w}")

    print("\n✅ Configuration OK")
    print("\nStart training:")
    print(f"   python -m src.rararl.main train --config {run_config_path}")

    return True


if __name__ == "__main__":
    try:
        success = check_config(sys.argv[1] if len(sys.argv) > 1 else None)
        sys.exit(0 if success else 1)
    except ImportError as e:
        print(f"❌ Missing dependency: {e}")
        print("   pip install -r requirements.txt")
        sys.exit(1)
    except Exception as e:
        print(f"❌ Check failed: {e}")
        sys.exit(1)
