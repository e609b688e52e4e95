#!/usr/bin/env python3
"""
Скрипт для пакетного прогона нескольких конфигураций:
minimize → measure → fit для каждой, затем сводка натяжений струны
"""

import argparse
import json
import os
import sys
import logging
from typing import Any, Dict, List, Optional

from gauge_vmc import GaugeVMCRunner, setup_logging
from run_config import load_config

logger = logging.getLogger(__name__)

DEFAULT_CAMPAIGN = [
    {"name": "L4, g=0.5", "config": "config_L4_g0.5.json"},
    {"name": "L4, g=2.0", "config": "config_L4_g2.0.json"},
]
STAGES = ("minimize", "measure", "fit")


class CampaignRunner:
    def __init__(self, campaign: Optional[List[Dict[str, str]]] = None, summary_file: str = "data/campaign_summary.json"):
        self.campaign = campaign or DEFAULT_CAMPAIGN
        self.summary_file = summary_file

    def run_entry(self, entry: Dict[str, str]) -> Dict[str, Any]:
        """Все этапы одной конфигурации; первый сбой останавливает цепочку"""
        if not os.path.exists(entry["config"]):
            logger.error(f"❌ Файл конфигурации не найден: {entry['config']}")
            return {"status": "error", "message": f"Config file not found: {entry['config']}"}

        config = load_config(entry["config"])
        params_file = os.path.join(config["out_dir"], "minimize.json")
        outcome: Dict[str, Any] = {"status": "success", "g": config["coupling.g"], "out_dir": config["out_dir"]}
        for stage in STAGES:
            logger.info(f"📍 {entry['name']}: этап {stage}")
            runner = GaugeVMCRunner(config, stage, params_file=params_file if stage == "measure" else None)
            if not runner.run():
                outcome.update({"status": "error", "message": f"stage {stage} failed"})
                return outcome
            if stage == "minimize":
                outcome["energy"] = runner.result["energy"]
            elif stage == "fit":
                area = runner.result["fits"].get("area", {})
                outcome["sigma"] = area.get("sigma")
                outcome["sigma_err"] = area.get("sigma_err")
                outcome["preferred"] = runner.result["fits"].get("preferred")
        return outcome

    def run_all(self) -> Dict[str, Dict[str, Any]]:
        logger.info(f"🚀 Кампания из {len(self.campaign)} конфигураций")
        results = {}
        for entry in self.campaign:
            logger.info(f"\n{'=' * 60}")
            logger.info(f"🔍 Обрабатываем: {entry['name']}")
            logger.info(f"{'=' * 60}")
            try:
                results[entry["name"]] = self.run_entry(entry)
            except Exception as e:
                logger.error(f"❌ {entry['name']}: Критическая ошибка: {e}")
                results[entry["name"]] = {"status": "error", "message": str(e)}
        self.create_summary_report(results)
        return results

    def create_summary_report(self, results: Dict[str, Dict[str, Any]]):
        """Сводка по кампании; σ(g) в порядке возрастания g"""
        logger.info("\n" + "=" * 60)
        logger.info("📊 СВОДНЫЙ ОТЧЕТ")
        logger.info("=" * 60)

        successful = [name for name, r in results.items() if r["status"] == "success"]
        failed = [name for name, r in results.items() if r["status"] == "error"]
        logger.info(f"✅ Успешно: {len(successful)} конфигураций")
        for name in successful:
            r = results[name]
            logger.info(f"   - {name}: E = {r.get('energy')}, σ = {r.get('sigma')} ± {r.get('sigma_err')}")
        if failed:
            logger.info(f"❌ Ошибки в {len(failed)} конфигурациях:")
            for name in failed:
                logger.info(f"   - {name}: {results[name].get('message')}")

        tension = sorted((r["g"], r["sigma"]) for r in results.values() if r.get("sigma") is not None)
        summary = {
            "total": len(self.campaign),
            "successful": len(successful),
            "failed": len(failed),
            "string_tension": [{"g": g, "sigma": sigma} for g, sigma in tension],
            "sigma_increases_with_g": all(b[1] > a[1] for a, b in zip(tension, tension[1:])) if tension else None,
            "results": results,
        }
        try:
            directory = os.path.dirname(self.summary_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.summary_file, "w", encoding="utf-8") as f:
                json.dump(summary, f, ensure_ascii=False, indent=2, default=str)
            logger.info(f"📁 Сводный отчет сохранен в {self.summary_file}")
        except Exception as e:
            logger.error(f"❌ Ошибка сохранения сводного отчета: {e}")
        return summary


def main():
    """Главная функция"""
    parser = argparse.ArgumentParser(description="Пакетный прогон minimize → measure → fit")
    parser.add_argument("--configs", nargs="*", default=None, help="Список JSON-конфигов")
    parser.add_argument("--summary", default="data/campaign_summary.json", help="Файл сводки")
    args = parser.parse_args()

    setup_logging("campaign.log")
    campaign = [{"name": os.path.splitext(os.path.basename(c))[0], "config": c} for c in args.configs] \
        if args.configs else None
    runner = CampaignRunner(campaign, args.summary)

    try:
        results = runner.run_all()
        successful = sum(1 for r in results.values() if r["status"] == "success")
        total = len(results)
        if successful == total:
            print(f"\n✅ Кампания завершена успешно! ({successful}/{total})")
            sys.exit(0)
        else:
            print(f"\n⚠️  Кампания завершена с ошибками ({successful}/{total})")
            sys.exit(1)
    except KeyboardInterrupt:
        logger.info("Кампания прервана пользователем")
        sys.exit(1)
    except Exception as e:
        logger.error(f"Неожиданная ошибка: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
