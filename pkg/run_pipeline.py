"""
메인 실행 스크립트
건강 이미지로 학습한 MAE의 재구성 오차로 이상 영역(용종) 분할
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

from ood_mae.exceptions import EXIT_OK, exit_code_for
from ood_mae.log_config import setup_logging
from ood_mae.model.config import ModelPresets
from ood_mae.pipeline_manager import PipelineManager
from ood_mae.run_config import load_run_config

logger = logging.getLogger('run_pipeline')

COMMANDS = ['synth-corpus', 'train', 'stats', 'infer', 'eval', 'ablate-mask', 'ablate-standardise', 'run-all']


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='마스크 오토인코더 기반 OOD 이상 영역 분할 파이프라인',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog='''
사용 예시:
  # 합성 코퍼스 생성 (학습 200, 테스트 건강 50 + 이상 50)
  python run_pipeline.py synth-corpus --n-healthy 250 --n-test-healthy 50 --n-anomalous 50 --out-dir data/synthetic

  # 학습 -> 잠재 통계 -> 추론 -> 평가
  python run_pipeline.py --config configs/tiny.env --run-dir runs/tiny train
  python run_pipeline.py --run-dir runs/tiny stats
  python run_pipeline.py --run-dir runs/tiny infer
  python run_pipeline.py --run-dir runs/tiny eval

  # 절제 실험
  python run_pipeline.py --run-dir runs/sweep ablate-mask --ratios 0.15 0.35 0.55 0.75
  python run_pipeline.py --run-dir runs/tiny ablate-standardise

  # 도메인 안/밖 테스트 세트를 한 번에 평가
  python run_pipeline.py --run-dir runs/all run-all --manifests data/synthetic/test.tsv data/synthetic/test_out_domain.tsv
        '''
    )

    parser.add_argument('--config', type=str, default=None, help='KEY=VALUE 설정 파일')
    parser.add_argument('--run-dir', type=str, default=None, help='출력 디렉토리')
    parser.add_argument('--seed', type=int, default=None, help='전체 시드')
    parser.add_argument('--preset', choices=ModelPresets.list_available(), default=None, help='모델 프리셋')
    parser.add_argument('--no-standardise', action='store_true', help='잠재 표준화 생략 (항등 통계)')
    parser.add_argument('--mask-ratio', type=float, default=None, help='가림 비율 (학습/추론 공통)')
    parser.add_argument('--mask-samples', type=int, default=None, help='추론 시 마스크 샘플 수 K')

    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth-corpus', help='합성 코퍼스 생성')
    synth.add_argument('--n-healthy', type=int, default=None, help='건강 이미지 총 수')
    synth.add_argument('--n-anomalous', type=int, default=None, help='이상 이미지 수')
    synth.add_argument('--n-test-healthy', type=int, default=None, help='테스트용 건강 이미지 수')
    synth.add_argument('--n-out-domain', type=int, default=None, help='다른 도메인 이상 이미지 수')
    synth.add_argument('--out-dir', type=str, default=None, help='코퍼스 디렉토리')

    train = sub.add_parser('train', help='건강 이미지로 MAE 학습')
    train.add_argument('--manifest', type=str, default=None, help='학습 매니페스트')

    stats = sub.add_parser('stats', help='ID 잠재 통계 계산')
    stats.add_argument('--checkpoint', type=str, default=None)
    stats.add_argument('--manifest', type=str, default=None)

    for name, help_text in (('infer', '이상 맵 추론'), ('ablate-standardise', '표준화 절제 실험')):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--checkpoint', type=str, default=None)
        p.add_argument('--stats', type=str, default=None)
        p.add_argument('--manifest', type=str, default=None, help='테스트 매니페스트')

    ev = sub.add_parser('eval', help='이상 맵 평가')
    ev.add_argument('--maps-dir', type=str, default=None)
    ev.add_argument('--manifest', type=str, default=None, help='테스트 매니페스트')

    ablate = sub.add_parser('ablate-mask', help='가림 비율 절제 실험')
    ablate.add_argument('--ratios', type=float, nargs='+', default=None)

    run_all = sub.add_parser('run-all', help='학습부터 평가까지 한 번에 (테스트 매니페스트 여러 개 가능)')
    run_all.add_argument('--manifests', type=str, nargs='+', default=None, help='테스트 매니페스트 목록')

    return parser


def config_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """명령행 인자 -> 설정 키"""
    overrides = {
        'RUN_DIR': args.run_dir,
        'RUN_SEED': args.seed,
        'MODEL_PRESET': args.preset,
        'TRAIN_MASKING_RATIO': args.mask_ratio,
        'INFER_MASKING_RATIO': args.mask_ratio,
        'INFER_NUM_MASK_SAMPLES': args.mask_samples,
    }
    if args.no_standardise:
        overrides['RUN_STANDARDISE'] = False
    if args.command == 'synth-corpus':
        overrides.update({
            'CORPUS_DIR': args.out_dir,
            'CORPUS_N_HEALTHY': args.n_healthy,
            'CORPUS_N_ANOMALOUS': args.n_anomalous,
            'CORPUS_N_TEST_HEALTHY': args.n_test_healthy,
            'CORPUS_N_OUT_DOMAIN': args.n_out_domain,
        })
    if args.command == 'ablate-mask' and args.ratios:
        overrides['OUTPUT_ABLATE_RATIOS'] = tuple(args.ratios)
    return overrides


def run(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, config_overrides(args))
    setup_logging(config.run_path / 'logs', name=args.command.replace('-', '_'))
    manager = PipelineManager(config)

    if args.command == 'synth-corpus':
        c = config.corpus
        manager.cmd_synth_corpus(c.n_healthy, c.n_anomalous, config.seed, c.dir,
                                 n_test_healthy=c.n_test_healthy, n_out_domain=c.n_out_domain)
    elif args.command == 'train':
        manager.cmd_train(args.manifest)
    elif args.command == 'stats':
        manager.cmd_stats(args.checkpoint, args.manifest)
    elif args.command == 'infer':
        manager.cmd_infer(args.checkpoint, args.stats, args.manifest)
    elif args.command == 'eval':
        manager.cmd_eval(args.maps_dir, args.manifest)
    elif args.command == 'ablate-mask':
        manager.cmd_ablate_mask()
    elif args.command == 'ablate-standardise':
        manager.cmd_ablate_standardise(args.checkpoint, args.stats, args.manifest)
    elif args.command == 'run-all':
        manager.run_all(args.manifests)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Returns:
        종료 코드 (0 성공, 2 계약 위반, 3 입출력 오류)
    """
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except Exception as e:
        setup_logging()
        logger.exception(f"✗ [{args.command}] 실패: {e}")
        return exit_code_for(e)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
